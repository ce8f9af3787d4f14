"""Step-size schedules.

Three regimes are provided:

* :class:`Theorem1Schedule` -- the strong-convexity-aware recursion whose
  consecutive steps satisfy
  ``g_n**-2 * (1 + 2 g_n mu_g) == g_{n+1}**-2 * (1 - 2 g_{n+1} mu_h eta)``.
* :class:`PolynomialSchedule` -- ``g_n = g_0 / (n + 1)**alpha``.
* :class:`ConstantSchedule` -- a fixed step inside ``[eps, alpha_r (2/L - eps)]``.

Schedules are single-owner mutable objects: ``gamma`` is the current step
``g_n`` and :meth:`Schedule.next_gamma` advances to ``g_{n+1}``.
"""

from __future__ import annotations

import copy
import math
from typing import Optional

import numpy as np

from .core import DomainError


class ScheduleError(DomainError):
    """Invalid schedule parameters."""


class Schedule:
    gamma0: float

    def __init__(self):
        self.reset()

    def reset(self):
        self.n = 0
        self.gamma = self.gamma0

    def fresh(self) -> "Schedule":
        """An independent copy rewound to ``n = 0``."""
        s = copy.copy(self)
        s.reset()
        return s

    def next_gamma(self) -> float:
        self.gamma = self._advance(self.n, self.gamma)
        self.n += 1
        return self.gamma

    def _advance(self, n: int, gamma: float) -> float:
        raise NotImplementedError

    def sequence(self, n_steps: int) -> np.ndarray:
        """``[g_0, ..., g_{n_steps}]`` without touching this instance's state."""
        out = np.empty(n_steps + 1)
        g = out[0] = self.gamma0
        adv = self._advance
        for n in range(n_steps):
            g = out[n + 1] = adv(n, g)
        return out

    def describe(self) -> dict:
        raise NotImplementedError


class Theorem1Schedule(Schedule):
    """Recursion that needs the strong convexity ``mu_h`` of the smooth term.

    ``mu_g`` is the strong convexity of ``g`` (zero allowed). Any ``gamma0 > 0``
    is accepted; early steps may be large before the sequence settles into
    its ``1 / ((eta mu_h + mu_g) n)`` decay.
    """

    def __init__(self, gamma0: float, eta: float, mu_h: Optional[float], mu_g: float = 0.0):
        if not gamma0 > 0:
            raise ScheduleError(f"gamma0 must be positive, got {gamma0}")
        if not 0 < eta < 1:
            raise ScheduleError(f"eta must lie in (0, 1), got {eta}")
        if mu_h is None:
            raise ScheduleError("theorem1 schedule requires a known strong convexity mu_h")
        if not mu_h > 0:
            raise ScheduleError(f"theorem1 schedule requires mu_h > 0, got {mu_h}")
        if mu_g < 0:
            raise ScheduleError(f"mu_g must be nonnegative, got {mu_g}")
        self.gamma0 = float(gamma0)
        self.eta = float(eta)
        self.mu_h = float(mu_h)
        self.mu_g = float(mu_g)
        super().__init__()

    def _advance(self, n, gamma):
        # (-a + sqrt(a^2 + s g^2)) / s with s = 1 + 2 g mu_g, rationalised to
        # avoid cancellation; must match sequence() operation for operation
        g2 = gamma * gamma
        a = g2 * (self.mu_h * self.eta)
        return g2 / (a + math.sqrt(a * a + (1.0 + 2.0 * self.mu_g * gamma) * g2))

    def sequence(self, n_steps):
        out = np.empty(n_steps + 1)
        g = out[0] = self.gamma0
        c = self.mu_h * self.eta
        two_mu_g = 2.0 * self.mu_g
        sqrt = math.sqrt
        for n in range(1, n_steps + 1):
            g2 = g * g
            a = g2 * c
            g = out[n] = g2 / (a + sqrt(a * a + (1.0 + two_mu_g * g) * g2))
        return out

    def limit(self) -> float:
        """Limit of ``(n + 1) g_n``."""
        return 1.0 / (self.eta * self.mu_h + self.mu_g)

    def describe(self):
        return {"kind": "theorem1", "gamma0": self.gamma0, "eta": self.eta,
                "mu_h": self.mu_h, "mu_g": self.mu_g}


class PolynomialSchedule(Schedule):
    """``g_n = gamma0 / (n + 1)**alpha`` for ``alpha`` in ``(0, 1]``.

    ``mu_h`` is optional and only used to report ``beta = 2 mu_h gamma0``, the
    limit of ``2 mu_h n**alpha g_n``, and the rate exponent it predicts.
    """

    def __init__(self, gamma0: float, alpha: float = 1.0, mu_h: Optional[float] = None):
        if not gamma0 > 0:
            raise ScheduleError(f"gamma0 must be positive, got {gamma0}")
        if not 0 < alpha <= 1:
            raise ScheduleError(f"alpha must lie in (0, 1], got {alpha}")
        self.gamma0 = float(gamma0)
        self.alpha = float(alpha)
        self.mu_h = None if mu_h is None else float(mu_h)
        super().__init__()

    def _advance(self, n, gamma):
        return self.gamma0 / (n + 2) ** self.alpha

    def sequence(self, n_steps):
        return self.gamma0 / np.arange(1, n_steps + 2, dtype=np.float64) ** self.alpha

    @property
    def beta(self) -> Optional[float]:
        if self.mu_h is None:
            return None
        return 2.0 * self.mu_h * self.gamma0

    def predicted_exponent(self) -> Optional[float]:
        """Exponent ``e`` in ``E||x_g - x*||^2 = O(n**e)``; ``None`` if unknowable.

        At ``alpha = 1, beta = 1`` the bound is ``log(n)/n``, reported as ``-1``.
        """
        if self.alpha < 1:
            return -self.alpha
        beta = self.beta
        if beta is None:
            return None
        return -min(beta, 1.0)

    def describe(self):
        return {"kind": "polynomial", "gamma0": self.gamma0, "alpha": self.alpha,
                "mu_h": self.mu_h}


class ConstantSchedule(Schedule):
    """Constant step for a smooth term that need not be strongly convex."""

    def __init__(self, gamma: float, L: Optional[float], eps: float, alpha_r: float):
        if L is None or not L > 0:
            raise ScheduleError("constant schedule requires a known Lipschitz constant L > 0")
        if not 0 < eps < 1:
            raise ScheduleError(f"eps must lie in (0, 1), got {eps}")
        if not 0 < alpha_r < 1:
            raise ScheduleError(f"alpha_r must lie in (0, 1), got {alpha_r}")
        upper = alpha_r * (2.0 / L - eps)
        if not eps <= gamma <= upper:
            raise ScheduleError(
                f"step violates ε ≤ γ ≤ α(2L⁻¹ − ε): need {eps} <= {gamma} <= {upper}")
        self.gamma0 = float(gamma)
        self.L = float(L)
        self.eps = float(eps)
        self.alpha_r = float(alpha_r)
        super().__init__()

    @classmethod
    def default_for(cls, L: float) -> "ConstantSchedule":
        """Step ``1/L`` with bounds chosen so that it is admissible for any ``L``."""
        eps = min(0.5 / L, 0.5)
        return cls(1.0 / L, L, eps, 0.9)

    def _advance(self, n, gamma):
        return self.gamma0

    def sequence(self, n_steps):
        return np.full(n_steps + 1, self.gamma0)

    def describe(self):
        return {"kind": "constant", "gamma": self.gamma0, "L": self.L, "eps": self.eps,
                "alpha_r": self.alpha_r}


def schedule_from_descriptor(desc: dict) -> Schedule:
    """Rebuild a schedule from :meth:`Schedule.describe` output."""
    kind = desc.get("kind")
    if kind == "theorem1":
        return Theorem1Schedule(desc["gamma0"], desc["eta"], desc["mu_h"], desc.get("mu_g", 0.0))
    if kind == "polynomial":
        return PolynomialSchedule(desc["gamma0"], desc.get("alpha", 1.0), desc.get("mu_h"))
    if kind == "constant":
        return ConstantSchedule(desc["gamma"], desc["L"], desc["eps"], desc["alpha_r"])
    raise ScheduleError(f"unknown schedule kind {kind!r}")


def identity_residual(schedule: Theorem1Schedule, gammas: np.ndarray) -> np.ndarray:
    """Relative violation of the step identity for each consecutive pair."""
    g0, g1 = gammas[:-1], gammas[1:]
    lhs = (1.0 + 2.0 * g0 * schedule.mu_g) / (g0 * g0)
    rhs = (1.0 - 2.0 * g1 * schedule.mu_h * schedule.eta) / (g1 * g1)
    return np.abs(lhs - rhs) / np.abs(lhs)


def asymptotic_limit_check(schedule: Theorem1Schedule, n_max: int) -> float:
    """``|(n_max + 1) g_{n_max} (eta mu_h + mu_g) - 1|``."""
    if n_max < 10_000:
        raise DomainError("asymptotic_limit_check needs n_max >= 1e4")
    g = schedule.sequence(n_max)[-1]
    return abs((n_max + 1) * g * (schedule.eta * schedule.mu_h + schedule.mu_g) - 1.0)


def rate_oracle(c: float, alpha: float, tau: float, s0: float, n_max: int) -> np.ndarray:
    """Worst case of ``s_{n+1} <= (1 - theta_n) s_n + tau theta_n**2``.

    ``theta_n = c n**-alpha``. Entry ``n`` of the result holds ``s_n`` for
    ``n = 0..n_max``; the update is skipped while ``theta_n >= 1``.
    """
    if not (c > 0 and tau > 0):
        raise DomainError("c and tau must be positive")
    if not 0 < alpha <= 1:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    s = np.empty(n_max + 1)
    s[0] = s[1] = s0
    n = np.arange(1, n_max, dtype=np.float64)
    theta = c * n ** -alpha
    cur = s0
    for k in range(n_max - 1):
        t = theta[k]
        if t < 1.0:
            cur = (1.0 - t) * cur + tau * t * t
        s[k + 2] = cur
    return s

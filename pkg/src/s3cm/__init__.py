"""Stochastic three-composite minimization.

Solvers for ``minimize f(x) + g(x) + h(x)`` where ``h`` is smooth and
accessed through (possibly stochastic) gradients and ``f``, ``g`` are
handled through their proximal operators.
"""

from .core import (ContractError, DomainError, FiniteSumOracle, Indicator,
                   KernelQuadraticOracle, LeastSquaresOracle, Linear, NonFiniteError,
                   ProblemSpec, ProxTerm, QuadraticOracle, RandomSource, S3cmError,
                   SmoothOracle, SolverState, SquaredNorm, UnsupportedCheckError, Zero,
                   check_unbiasedness, fixed_point_residual)
from .schedules import (ConstantSchedule, PolynomialSchedule, Schedule, ScheduleError,
                        Theorem1Schedule)
from .solvers import (EXACT, STOCHASTIC, S3cmConfig, Trace, davis_yin_run, s3cm_init,
                      s3cm_run, s3cm_step, smcm_run)

__version__ = "0.1.0"

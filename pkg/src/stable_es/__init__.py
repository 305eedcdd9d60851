"""Stability-guaranteed evolution-strategy search over mixture-of-spring-damper
impedance policies."""

from .distributions import Gaussian, Wishart, estimate_gamma, gaussian_mle, wishart_update
from .imogic import PolicyDistribution, PolicyParams, control, lyapunov, sample_policy
from .optimizer import OptimizerConfig, init_informative, init_uninformative, iterate, run
from .sim2d import EnvConfig, make_task, rollout

__version__ = "0.1.0"

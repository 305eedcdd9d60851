"""Elite-based evolution strategy over stable impedance policies.

Each iteration samples ``Ns`` parameter sets, scores them with one episode
each, keeps the ``Ne`` best, refits the attractor Gaussian by maximum
likelihood and every Wishart factor with the entropy-driven update.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import NU_CAP, Gaussian, Wishart, estimate_gamma, gaussian_mle, wishart_update
from .imogic import PolicyDistribution, sample_policy
from .sim2d import rollout

log = logging.getLogger(__name__)

THREADS_ENV = "STABLE_ES_THREADS"
SETTLING_FACTOR = 5.83  # 2 % settling time of a critically damped pair is ~5.83 / omega


@dataclass
class OptimizerConfig:
    Ns: int = 15
    Ne: int = 3
    beta: float = 1.0
    gamma: dict | None = None  # dimension -> gamma; estimated when None
    max_iters: int = 100
    nu_stop: float = 1e4
    success_stop: float | None = None
    plateau_window: int = 5
    plateau_tol: float = 0.01
    jitter: float = 1e-8
    seed: int = 0
    denominator: str = "abs"
    nu_cap: float = NU_CAP
    elite_scaling: str = "pre"
    workers: int = 1

    def __post_init__(self):
        if not 1 <= self.Ne < self.Ns:
            raise ValueError(f"need 1 <= Ne < Ns, got Ne={self.Ne}, Ns={self.Ns}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.denominator not in ("abs", "literal"):
            raise ValueError(f"unknown denominator {self.denominator!r}")


@dataclass
class Evaluation:
    total_return: float
    success: float = 0.0
    rollouts: list = field(default_factory=list)
    max_excursion: float = 0.0  # largest |s| reached, m


@dataclass
class IterationRecord:
    iter: int
    R_b: float
    R_e: float
    nu_by_param: dict
    success_rate: float
    elite_returns: list
    wall_time: float
    returns: list = field(default_factory=list)
    elite_indices: list = field(default_factory=list)


@dataclass
class RunResult:
    phi: PolicyDistribution
    records: list
    best_policy: object
    best_return: float
    stop_reason: str


class EnvObjective:
    """Scores a policy by its episode return on a task environment.

    With several ``initials`` the return is averaged and the success value is
    the fraction of successful episodes.
    """

    def __init__(self, cfg, initials=None, keep_rollouts=False):
        self.cfg = cfg
        self.initials = [None] if not initials else [tuple(p) for p in initials]
        self.keep_rollouts = keep_rollouts

    def __call__(self, policy):
        ros = [rollout(policy, self.cfg, init_pos=p) for p in self.initials]
        return Evaluation(
            float(np.mean([r.total_return for r in ros])),
            float(np.mean([r.success for r in ros])),
            ros if self.keep_rollouts else [],
            max(float(np.max(np.linalg.norm(r.s, axis=1))) for r in ros),
        )


def sample_rng(seed, iteration, index):
    """Independent stream for one sample of one iteration."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(iteration), int(index)]))


def select_elites(returns, Ne):
    """Indices of the ``Ne`` largest returns; ties go to the lower index.

    ``returns`` is either a sequence of floats (index = position) or of
    ``(index, value)`` pairs.
    """
    items = list(returns)
    if items and isinstance(items[0], (tuple, list)):
        pairs = [(int(i), float(r)) for i, r in items]
    else:
        pairs = [(i, float(r)) for i, r in enumerate(items)]
    if Ne > len(pairs):
        raise ValueError(f"cannot select {Ne} elites from {len(pairs)} samples")
    if Ne < 1:
        raise ValueError("Ne must be >= 1")
    return [i for i, _ in sorted(pairs, key=lambda p: (-p[1], p[0]))[:Ne]]


def worker_count(requested=1):
    cap = os.environ.get(THREADS_ENV)
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def evaluate_population(objective, policies, workers=1):
    n = worker_count(workers)
    if n == 1 or len(policies) < 2:
        return [objective(p) for p in policies]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(objective, policies))


def gammas_for(phi, cfg):
    """gamma per distinct factor dimension present in ``phi``."""
    dims = sorted({w.dim for w in phi.wisharts.values()})
    given = dict(cfg.gamma or {})
    out = {}
    for d in dims:
        out[d] = float(given[d]) if d in given else estimate_gamma(d).gamma
    return out


def update_distribution(phi, policies, elite_idx, R_b, R_e, gammas, cfg):
    elites = [policies[i] for i in elite_idx]
    new_w = {}
    for name, w in phi.wisharts.items():
        mats = [p.matrices()[name] for p in elites]
        new_w[name] = wishart_update(
            w, mats, R_b, R_e, gammas[w.dim], cfg.beta, cfg.denominator,
            nu_cap=cfg.nu_cap, scaling=cfg.elite_scaling,
        )
    attractors = None
    if phi.K:
        attractors = gaussian_mle([p.attractors for p in elites], cfg.jitter)
    return PolicyDistribution(new_w, attractors)


def iterate(phi, objective, cfg, iteration=0, gammas=None):
    """One sample / evaluate / select / refit round.

    Returns ``(new_phi, record, policies, evaluations)``.
    """
    t0 = time.perf_counter()
    gammas = gammas if gammas is not None else gammas_for(phi, cfg)
    policies = [sample_policy(phi, sample_rng(cfg.seed, iteration, n)) for n in range(cfg.Ns)]
    evals = evaluate_population(objective, policies, cfg.workers)
    returns = np.array([e.total_return for e in evals], dtype=float)
    if not np.all(np.isfinite(returns)):
        raise FloatingPointError(f"non-finite returns at iteration {iteration}: {returns}")
    elite_idx = select_elites(returns.tolist(), cfg.Ne)
    R_b = float(np.mean(returns))
    R_e = float(np.mean(returns[elite_idx]))
    new_phi = update_distribution(phi, policies, elite_idx, R_b, R_e, gammas, cfg)
    record = IterationRecord(
        iter=iteration,
        R_b=R_b,
        R_e=max(R_e, R_b),
        nu_by_param=new_phi.nu_by_param(),
        success_rate=float(np.mean([e.success for e in evals])),
        elite_returns=returns[elite_idx].tolist(),
        wall_time=time.perf_counter() - t0,
        returns=returns.tolist(),
        elite_indices=elite_idx,
    )
    return new_phi, record, policies, evals


def _plateaued(records, window, tol):
    if len(records) <= window:
        return False
    ref = records[-1 - window].R_b
    return abs(records[-1].R_b - ref) <= tol * max(abs(ref), 1e-12)


def run(cfg, objective, init_phi, callback=None):
    """Iterate until ``max_iters``, the terminal nu, or the success/plateau
    condition. ``callback(record, policies, evaluations)`` is called after
    every iteration."""
    phi = init_phi
    records = []
    best_policy, best_return = None, -np.inf
    reason = "max_iters"
    gammas = gammas_for(phi, cfg) if cfg.max_iters else {}
    for i in range(cfg.max_iters):
        phi, rec, policies, evals = iterate(phi, objective, cfg, i, gammas)
        records.append(rec)
        for p, e in zip(policies, evals):
            if e.total_return > best_return:
                best_policy, best_return = p, e.total_return
        log.info(
            "iter %d  R_b %.4f  R_e %.4f  success %.2f  min nu %.1f",
            i, rec.R_b, rec.R_e, rec.success_rate, min(rec.nu_by_param.values()),
        )
        if callback is not None:
            callback(rec, policies, evals)
        if min(phi.nu_by_param().values()) >= cfg.nu_stop:
            reason = "nu_stop"
            break
        if (
            cfg.success_stop is not None
            and rec.success_rate >= cfg.success_stop
            and _plateaued(records, cfg.plateau_window, cfg.plateau_tol)
        ):
            reason = "success_stop"
            break
    return RunResult(phi, records, best_policy, float(best_return), reason)


def init_uninformative(dim, K):
    """Identity scales and minimal degrees of freedom; attractors ~ N(0, I)."""
    if K < 0:
        raise ValueError("K must be >= 0")
    wisharts = {
        "S0": Wishart(np.eye(dim), dim + 1),
        "D0": Wishart(np.eye(dim), dim + 1),
    }
    for k in range(1, K + 1):
        wisharts[f"S{k}"] = Wishart(np.eye(dim), dim + 1)
        wisharts[f"D{k}"] = Wishart(np.eye(dim), dim + 1)
        wisharts[f"l{k}"] = Wishart(np.eye(1), 2)
    attractors = Gaussian(np.zeros(K * dim), np.eye(K * dim)) if K else None
    return PolicyDistribution(wisharts, attractors)


def settling_stiffness(mass, horizon):
    """Stiffness whose critically damped response settles (2 %) in ``horizon``."""
    return mass * (SETTLING_FACTOR / horizon) ** 2


def critical_damping(mass, stiffness):
    return 2.0 * np.sqrt(mass * np.asarray(stiffness, dtype=float))


def init_informative(dim, K, mass, horizon, init_pos, nu0=30.0, stiffness=None, cov_floor=1e-6):
    """Distribution centered on a critically damped base spring-damper.

    The base stiffness mean defaults to the free-motion settling rule; mixture
    components get a quarter of it with critically damped partners. ``init_pos``
    is relative to the goal and sits one standard deviation per axis from
    each attractor mean (zero).
    """
    if not mass > 0 or not horizon > 0:
        raise ValueError("mass and horizon must be positive")
    k = np.full(dim, settling_stiffness(mass, horizon)) if stiffness is None else (
        np.broadcast_to(np.asarray(stiffness, dtype=float), (dim,)).copy()
    )
    p = np.asarray(init_pos, dtype=float).reshape(dim)
    wisharts = {
        "S0": Wishart(np.diag(k) / nu0, nu0),
        "D0": Wishart(np.diag(critical_damping(mass, k)) / nu0, nu0),
    }
    for j in range(1, K + 1):
        wisharts[f"S{j}"] = Wishart(np.diag(k) / (4 * nu0), nu0)
        wisharts[f"D{j}"] = Wishart(np.diag(critical_damping(mass, k / 4)) / nu0, nu0)
        wisharts[f"l{j}"] = Wishart(np.eye(1), 2)
    attractors = None
    if K:
        var = np.maximum(p**2, cov_floor)
        attractors = Gaussian(np.zeros(K * dim), np.diag(np.tile(var, K)))
    return PolicyDistribution(wisharts, attractors)

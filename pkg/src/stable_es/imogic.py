"""Mixture-of-spring-dampers variable impedance policy.

The control force is

    u = -S0 s - D0 sdot - sum_k w_k(s) [S_k (s - s_k) + D_k sdot]

with Gaussian-kernel weights ``w_k(s) = exp(-l_k V_k(s))`` and
``V_k(s) = 1/2 (s - s_k)^T S_k (s - s_k)``. With that kernel the position
dependent force is exactly the negative gradient of

    Phi(s) = 1/2 s^T S0 s + sum_k (1 - exp(-l_k V_k(s))) / l_k

so the energy ``V = 1/2 m |sdot|^2 + Phi(s)`` dissipates at the rate
``-sdot^T D_bar(s) sdot`` in free motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import Gaussian, Wishart
from .linalg import as_spd, eigvalsh


@dataclass(frozen=True)
class Component:
    S: np.ndarray
    D: np.ndarray
    s: np.ndarray
    l: float


class PolicyParams:
    """One stable parameter set; every constraint is checked on construction.

    Components are stored stacked (``Sk``: (K, D, D), ``Dk``: (K, D, D),
    ``sk``: (K, D), ``lk``: (K,)) for vectorized evaluation.
    """

    __slots__ = ("S0", "D0", "Sk", "Dk", "sk", "lk")

    def __init__(self, S0, D0, Sk=None, Dk=None, sk=None, lk=None):
        S0 = as_spd(S0, "S0")
        dim = S0.shape[0]
        D0 = as_spd(D0, "D0")
        if D0.shape != S0.shape:
            raise ValueError("S0 and D0 dimensions differ")
        K = 0 if Sk is None else len(Sk)
        Sk = np.zeros((0, dim, dim)) if Sk is None else np.asarray(Sk, dtype=float)
        Dk = np.zeros((0, dim, dim)) if Dk is None else np.asarray(Dk, dtype=float)
        sk = np.zeros((0, dim)) if sk is None else np.asarray(sk, dtype=float).reshape(K, dim)
        lk = np.zeros(0) if lk is None else np.asarray(lk, dtype=float).reshape(K)
        if Sk.shape != (K, dim, dim) or Dk.shape != (K, dim, dim):
            raise ValueError("component matrices must all be D x D")
        Sk = np.stack([as_spd(m, f"S{k + 1}") for k, m in enumerate(Sk)]) if K else Sk
        Dk = np.stack([as_spd(m, f"D{k + 1}") for k, m in enumerate(Dk)]) if K else Dk
        if not np.all(np.isfinite(sk)):
            raise ValueError("attractors must be finite")
        if not np.all(lk > 0) or not np.all(np.isfinite(lk)):
            raise ValueError(f"kernel sharpness must be positive, got {lk}")
        for name, value in zip(self.__slots__, (S0, D0, Sk, Dk, sk, lk)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def __setattr__(self, name, value):
        raise AttributeError("PolicyParams is immutable")

    def __reduce__(self):
        return (PolicyParams, (self.S0, self.D0, self.Sk, self.Dk, self.sk, self.lk))

    @classmethod
    def from_components(cls, S0, D0, components=()):
        components = list(components)
        if not components:
            return cls(S0, D0)
        return cls(
            S0,
            D0,
            [c.S for c in components],
            [c.D for c in components],
            [c.s for c in components],
            [c.l for c in components],
        )

    @property
    def dim(self):
        return self.S0.shape[0]

    @property
    def K(self):
        return self.lk.shape[0]

    @property
    def components(self):
        return [
            Component(self.Sk[k], self.Dk[k], self.sk[k], float(self.lk[k]))
            for k in range(self.K)
        ]

    def matrices(self):
        """Named SPD parameters (scalars as 1x1), in distribution order."""
        out = {"S0": self.S0, "D0": self.D0}
        for k in range(self.K):
            out[f"S{k + 1}"] = self.Sk[k]
            out[f"D{k + 1}"] = self.Dk[k]
            out[f"l{k + 1}"] = self.lk[k].reshape(1, 1)
        return out

    @property
    def attractors(self):
        """Stacked attractor vector [s_1; ...; s_K]."""
        return self.sk.reshape(-1)

    def to_dict(self):
        return {
            "kind": "policy",
            "S0": self.S0.tolist(),
            "D0": self.D0.tolist(),
            "components": [
                {"S": c.S.tolist(), "D": c.D.tolist(), "s": c.s.tolist(), "l": c.l}
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d):
        comps = [
            Component(np.asarray(c["S"]), np.asarray(c["D"]), np.asarray(c["s"]), float(c["l"]))
            for c in d.get("components", [])
        ]
        return cls.from_components(np.asarray(d["S0"]), np.asarray(d["D0"]), comps)


@dataclass(frozen=True)
class CombinedImpedance:
    S_bar: np.ndarray
    D_bar: np.ndarray
    s_bar: np.ndarray
    weights: np.ndarray


def _check_state(p, *vectors):
    out = []
    for v in vectors:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape[0] != p.dim:
            raise ValueError(f"state dimension {v.shape[0]} does not match policy dimension {p.dim}")
        out.append(v)
    return out


def _kernel_energies(p, s):
    d = s - p.sk
    return 0.5 * np.einsum("ki,kij,kj->k", d, p.Sk, d), d


def mixing_weights(p, s):
    (s,) = _check_state(p, s)
    Vk, _ = _kernel_energies(p, s)
    return np.exp(-p.lk * Vk)


def control(p, s, sdot):
    s, sdot = _check_state(p, s, sdot)
    u = -p.S0 @ s - p.D0 @ sdot
    if p.K:
        Vk, d = _kernel_energies(p, s)
        w = np.exp(-p.lk * Vk)
        u -= np.einsum("k,kij,kj->i", w, p.Sk, d) + np.einsum("k,kij,j->i", w, p.Dk, sdot)
    return u


def combined_impedance(p, s, sdot=None):
    """Equivalent state-dependent stiffness, damping and reference point.

    ``-S_bar (s - s_bar) - D_bar sdot`` reproduces :func:`control` at the
    query state. ``sdot`` does not enter the result and may be omitted.
    """
    (s,) = _check_state(p, s)
    w = mixing_weights(p, s)
    S_bar = p.S0 + np.einsum("k,kij->ij", w, p.Sk)
    D_bar = p.D0 + np.einsum("k,kij->ij", w, p.Dk)
    rhs = np.einsum("k,kij,kj->i", w, p.Sk, p.sk)
    try:
        s_bar = np.linalg.solve(S_bar, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("combined stiffness is singular") from exc
    return CombinedImpedance(S_bar, D_bar, s_bar, w)


def potential(p, s):
    """Position-dependent part of the Lyapunov energy."""
    (s,) = _check_state(p, s)
    Vk, _ = _kernel_energies(p, s)
    return 0.5 * s @ p.S0 @ s + float(np.sum(-np.expm1(-p.lk * Vk) / p.lk))


def lyapunov(p, mass, s, sdot):
    """Energy ``1/2 m |sdot|^2 + Phi(s)`` in joules."""
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    s, sdot = _check_state(p, s, sdot)
    return 0.5 * mass * float(sdot @ sdot) + potential(p, s)


def lyapunov_rate(p, s, sdot):
    """Free-motion dissipation rate ``-sdot^T D_bar(s) sdot`` (W)."""
    s, sdot = _check_state(p, s, sdot)
    D_bar = combined_impedance(p, s).D_bar
    return -float(sdot @ D_bar @ sdot)


def lyapunov_trace(p, mass, s, sdot):
    """:func:`lyapunov` evaluated along arrays of states, shape (N, D)."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    sdot = np.atleast_2d(np.asarray(sdot, dtype=float))
    base = 0.5 * np.einsum("ni,ij,nj->n", s, p.S0, s)
    kinetic = 0.5 * mass * np.einsum("ni,ni->n", sdot, sdot)
    if not p.K:
        return kinetic + base
    d = s[:, None, :] - p.sk[None]
    Vk = 0.5 * np.einsum("nki,kij,nkj->nk", d, p.Sk, d)
    return kinetic + base + np.sum(-np.expm1(-p.lk * Vk) / p.lk, axis=1)


def dissipation_trace(p, s, sdot):
    """:func:`lyapunov_rate` along arrays of states, shape (N, D)."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    sdot = np.atleast_2d(np.asarray(sdot, dtype=float))
    rate = -np.einsum("ni,ij,nj->n", sdot, p.D0, sdot)
    if p.K:
        d = s[:, None, :] - p.sk[None]
        w = np.exp(-p.lk * 0.5 * np.einsum("nki,kij,nkj->nk", d, p.Sk, d))
        rate -= np.einsum("nk,ni,kij,nj->n", w, sdot, p.Dk, sdot)
    return rate


def impedance_eigenvalues(p, s):
    """Ascending eigenvalues of (S_bar, D_bar) at ``s``."""
    ci = combined_impedance(p, s)
    return eigvalsh(ci.S_bar), eigvalsh(ci.D_bar)


def free_motion_trajectory(p, mass, s0, sdot0=None, duration=1.0, dt=1e-3):
    """Integrate ``m sddot = u(s, sdot)`` with classical RK4, no contact and
    with the control law evaluated continuously.

    Returns ``(t, s, sdot)`` arrays sampled every ``dt``.
    """
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    s, v = _check_state(p, s0, np.zeros(p.dim) if sdot0 is None else sdot0)
    n = int(round(duration / dt))
    S = np.empty((n + 1, p.dim))
    Vel = np.empty((n + 1, p.dim))
    S[0], Vel[0] = s, v

    def acc(s, v):
        return control(p, s, v) / mass

    for i in range(n):
        k1s, k1v = v, acc(s, v)
        k2s, k2v = v + 0.5 * dt * k1v, acc(s + 0.5 * dt * k1s, v + 0.5 * dt * k1v)
        k3s, k3v = v + 0.5 * dt * k2v, acc(s + 0.5 * dt * k2s, v + 0.5 * dt * k2v)
        k4s, k4v = v + dt * k3v, acc(s + dt * k3s, v + dt * k3v)
        s = s + dt / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
        v = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        S[i + 1], Vel[i + 1] = s, v
    return np.arange(n + 1) * dt, S, Vel


class PolicyDistribution:
    """Product sampling distribution over one parameter set.

    One :class:`Wishart` per SPD parameter (``S0``, ``D0``, ``S1``, ``D1``,
    ``l1``, ...; the ``l`` factors are 1-dimensional) and one
    :class:`Gaussian` over the stacked attractors (``None`` when K = 0).
    """

    def __init__(self, wisharts, attractors=None):
        self.wisharts = dict(wisharts)
        if "S0" not in self.wisharts or "D0" not in self.wisharts:
            raise ValueError("distribution needs S0 and D0 factors")
        self.dim = self.wisharts["S0"].dim
        self.K = sum(1 for name in self.wisharts if name.startswith("l"))
        expected = {"S0", "D0"} | {f"{p}{k}" for k in range(1, self.K + 1) for p in "SDl"}
        if set(self.wisharts) != expected:
            raise ValueError(f"distribution factors {sorted(self.wisharts)} do not match K={self.K}")
        for name, w in self.wisharts.items():
            want = 1 if name.startswith("l") else self.dim
            if w.dim != want:
                raise ValueError(f"factor {name} has dimension {w.dim}, expected {want}")
        if self.K:
            if attractors is None or attractors.dim != self.K * self.dim:
                raise ValueError("attractor Gaussian must cover K * D coordinates")
        elif attractors is not None and attractors.dim:
            raise ValueError("K = 0 distribution cannot carry attractors")
        self.attractors = attractors if self.K else None

    @property
    def names(self):
        return list(self.wisharts)

    def nu_by_param(self):
        return {name: w.nu for name, w in self.wisharts.items()}

    def sample(self, rng):
        return sample_policy(self, rng)

    def mean_policy(self):
        """The policy at the distribution means (nu W per factor)."""
        w = self.wisharts
        if not self.K:
            return PolicyParams(w["S0"].mean, w["D0"].mean)
        ks = range(1, self.K + 1)
        return PolicyParams(
            w["S0"].mean,
            w["D0"].mean,
            [w[f"S{k}"].mean for k in ks],
            [w[f"D{k}"].mean for k in ks],
            self.attractors.mean.reshape(self.K, self.dim),
            [w[f"l{k}"].mean[0, 0] for k in ks],
        )

    def to_dict(self):
        return {
            "kind": "distribution",
            "wisharts": {name: w.to_dict() for name, w in self.wisharts.items()},
            "attractors": None if self.attractors is None else self.attractors.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        wisharts = {name: Wishart.from_dict(w) for name, w in d["wisharts"].items()}
        att = d.get("attractors")
        return cls(wisharts, None if att is None else Gaussian.from_dict(att))


def sample_policies(phi, rng, n):
    """Draw ``n`` parameter sets with one vectorized draw per factor."""
    draws = {name: w.sample(rng, size=n) for name, w in phi.wisharts.items()}
    att = phi.attractors.sample(rng, size=n) if phi.K else None
    ks = range(1, phi.K + 1)
    out = []
    for i in range(n):
        if not phi.K:
            out.append(PolicyParams(draws["S0"][i], draws["D0"][i]))
            continue
        out.append(
            PolicyParams(
                draws["S0"][i],
                draws["D0"][i],
                [draws[f"S{k}"][i] for k in ks],
                [draws[f"D{k}"][i] for k in ks],
                att[i].reshape(phi.K, phi.dim),
                [draws[f"l{k}"][i, 0, 0] for k in ks],
            )
        )
    return out


def sample_policy(phi, rng):
    """Draw one parameter set; the result always satisfies the stability
    constraints because every SPD factor is Wishart distributed."""
    w = phi.wisharts
    S0 = w["S0"].sample(rng)
    D0 = w["D0"].sample(rng)
    if not phi.K:
        return PolicyParams(S0, D0)
    ks = range(1, phi.K + 1)
    Sk, Dk, lk = [], [], []
    for k in ks:
        Sk.append(w[f"S{k}"].sample(rng))
        Dk.append(w[f"D{k}"].sample(rng))
        lk.append(w[f"l{k}"].sample(rng)[0, 0])
    sk = phi.attractors.sample(rng).reshape(phi.K, phi.dim)
    return PolicyParams(S0, D0, Sk, Dk, sk, lk)

"""Numerical stability checks along trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imogic import dissipation_trace, free_motion_trajectory, lyapunov_trace


def central_rate(values, dt):
    """Fourth-order central difference of a uniformly sampled series.

    Returns rates for the interior samples ``values[2:-2]``.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 5:
        raise ValueError("need at least 5 samples")
    return (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * dt)


@dataclass(frozen=True)
class DissipationReport:
    max_rate: float  # worst normalized forward-difference dV/dt
    max_rel_error: float  # worst |fd - analytic| / max(|analytic|, floor)
    V0: float
    V_end: float

    def ok(self, rate_tol=1e-6, rel_tol=1e-4):
        return self.max_rate <= rate_tol and self.max_rel_error <= rel_tol


def free_motion_dissipation(p, mass, s0, sdot0=None, duration=1.0, dt=1e-3):
    """Compare the finite-difference energy rate with ``-sdot^T D_bar sdot``.

    Rates are normalized by ``max(1, |V|)``; the relative error uses that
    same scale, times 1e-6, as its floor where the analytic rate vanishes.
    """
    _, S, Sd = free_motion_trajectory(p, mass, s0, sdot0, duration, dt)
    V = lyapunov_trace(p, mass, S, Sd)
    scale = np.maximum(1.0, np.abs(V))
    forward = np.diff(V) / dt / scale[:-1]
    fd = central_rate(V, dt)
    an = dissipation_trace(p, S[2:-2], Sd[2:-2])
    rel = np.abs(fd - an) / np.maximum(np.abs(an), 1e-6 * scale[2:-2])
    return DissipationReport(float(forward.max()), float(rel.max()), float(V[0]), float(V[-1]))

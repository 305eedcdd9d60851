"""Deterministic 2D block insertion.

A square point-mass block (no rotation) is driven by the policy force and
touches axis-aligned rectangles through a penalty contact model. Gravity is
exactly compensated, so the only forces are the action and the contacts.

World frame: x to the right, y up. The top surface is at y = 0 and the slot
is centered at x = 0. Positions handed to the policy are relative to the goal,
the block-center position when seated at the slot bottom.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .imogic import combined_impedance, control, lyapunov
from .linalg import eigvalsh

TASKS = ("Task1", "Task2", "Task3")


class SimulationDiverged(RuntimeError):
    def __init__(self, message, step=None, substep=None):
        super().__init__(message)
        self.step = step
        self.substep = substep


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass(frozen=True)
class EnvConfig:
    name: str = "custom"
    block_half_width: float = 0.025  # m
    mass: float = 2.0  # kg
    clearance: float = 2e-3  # m
    slot_depth: float = 0.05  # m
    horizon: float = 2.0  # s
    control_rate: float = 100.0  # Hz
    physics_substeps: int = 10
    contact_stiffness: float = 1e5  # N/m
    contact_damping: float = 1e3  # N s/m
    friction_coeff: float = 0.3
    action_cost_weight: float = 1e-6  # 1/N^2
    goal: tuple = (0.0, -0.025)  # world coordinates of the seated block center
    init_pos: tuple = (0.1, 0.025)  # world coordinates
    force_limit: float = 500.0  # N, per axis
    workspace_limit: float = 2.0  # m, divergence guard on |s|
    obstacles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.clearance > 0:
            raise ValueError("clearance must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not (self.control_rate > 0 and self.physics_substeps >= 1):
            raise ValueError("rates must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        object.__setattr__(self, "goal", tuple(float(g) for g in self.goal))
        object.__setattr__(self, "init_pos", tuple(float(g) for g in self.init_pos))
        object.__setattr__(
            self, "obstacles", tuple(r if isinstance(r, Rect) else Rect(*r) for r in self.obstacles)
        )

    @property
    def n_steps(self):
        return int(round(self.horizon * self.control_rate))

    @property
    def dt(self):
        return 1.0 / (self.control_rate * self.physics_substeps)

    @property
    def init_offset(self):
        """Initial position relative to the goal."""
        return np.array(self.init_pos) - np.array(self.goal)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["goal"] = list(self.goal)
        d["init_pos"] = list(self.init_pos)
        d["obstacles"] = [[r.x0, r.y0, r.x1, r.y1] for r in self.obstacles]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "obstacles" in d:
            d["obstacles"] = tuple(Rect(*r) for r in d["obstacles"])
        return cls(**d)


def slot_geometry(half_width, clearance, slot_depth, extent=0.5, base=0.1):
    """Surface at y = 0 with a slot of width ``2 h + clearance`` at x = 0."""
    a = half_width + 0.5 * clearance
    bottom = -(slot_depth + base)
    return (
        Rect(-extent, bottom, -a, 0.0),
        Rect(a, bottom, extent, 0.0),
        Rect(-a, bottom, a, -slot_depth),
    )


def make_task(name, **overrides):
    """Task geometries.

    Task1: 0.5 mm clearance, 1 s, block 3 cm directly above the slot.
    Task2: 2 mm clearance, 2 s, block resting on the surface 8 cm to the side.
    Task3: as Task2 but a 10 cm high wall stands between block and slot.
    """
    h = 0.025
    depth = 0.05
    if name == "Task1":
        clearance, horizon = 5e-4, 1.0
        init = (0.0, h + 0.03)
        extra = ()
    elif name == "Task2":
        clearance, horizon = 2e-3, 2.0
        init = (0.08, h)
        extra = ()
    elif name == "Task3":
        clearance, horizon = 2e-3, 2.0
        init = (0.14, h)
        extra = (Rect(0.07, 0.0, 0.09, 0.10),)
    else:
        raise ValueError(f"unknown task {name!r}; expected one of {TASKS}")
    cfg = EnvConfig(
        name=name,
        block_half_width=h,
        clearance=clearance,
        slot_depth=depth,
        horizon=horizon,
        goal=(0.0, -depth + h),
        init_pos=init,
        obstacles=slot_geometry(h, clearance, depth) + extra,
    )
    return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class SimState:
    s: np.ndarray  # m, relative to goal
    sdot: np.ndarray  # m/s
    t: float = 0.0
    in_contact: bool = False
    contact_force: np.ndarray = field(default_factory=lambda: np.zeros(2))


def initial_state(cfg, init_pos=None):
    p = np.asarray(cfg.init_pos if init_pos is None else init_pos, dtype=float)
    return SimState(p - np.array(cfg.goal), np.zeros(2))


def _contact_step(px, py, vx, vy, ux, uy, cfg, rects, step_index=None):
    """Advance one control period with semi-implicit Euler substeps.

    Returns the new (px, py, vx, vy), whether any overlap exists at the end,
    the last contact force (normal + friction) and the contact work (J) done
    on the block over the period.
    """
    h = cfg.block_half_width
    m = cfg.mass
    dt = cfg.dt
    kc = cfg.contact_stiffness
    dc = cfg.contact_damping
    mu = cfg.friction_coeff
    work = 0.0
    max_pen = 0.0
    in_contact = False
    fx_last = fy_last = 0.0
    for sub in range(cfg.physics_substeps):
        bx0, bx1, by0, by1 = px - h, px + h, py - h, py + h
        nfx = nfy = 0.0
        contacts = []
        in_contact = False
        for rx0, ry0, rx1, ry1 in rects:
            pr = rx1 - bx0
            pl = bx1 - rx0
            pu = ry1 - by0
            pd = by1 - ry0
            if pr <= 0.0 or pl <= 0.0 or pu <= 0.0 or pd <= 0.0:
                continue
            in_contact = True
            # minimum-penetration face
            pen, nx, ny = pr, 1.0, 0.0
            if pl < pen:
                pen, nx, ny = pl, -1.0, 0.0
            if pu < pen:
                pen, nx, ny = pu, 0.0, 1.0
            if pd < pen:
                pen, nx, ny = pd, 0.0, -1.0
            if pen > max_pen:
                max_pen = pen
            fn = kc * pen - dc * (vx * nx + vy * ny)
            if fn <= 0.0:
                continue  # repulsive only
            nfx += fn * nx
            nfy += fn * ny
            contacts.append((nx, ny, fn))
        vx_new = vx + dt / m * (ux + nfx)
        vy_new = vy + dt / m * (uy + nfy)
        ffx = ffy = 0.0
        for nx, ny, fn in contacts:
            tx, ty = -ny, nx
            vt = vx_new * tx + vy_new * ty
            if vt == 0.0 or mu == 0.0:
                continue
            ft = -math.copysign(min(mu * fn, m * abs(vt) / dt), vt)
            vx_new += dt / m * ft * tx
            vy_new += dt / m * ft * ty
            ffx += ft * tx
            ffy += ft * ty
        vx, vy = vx_new, vy_new
        px += dt * vx
        py += dt * vy
        fx_last, fy_last = nfx + ffx, nfy + ffy
        work += (fx_last * vx + fy_last * vy) * dt
        if not (math.isfinite(px) and math.isfinite(py) and math.isfinite(vx) and math.isfinite(vy)):
            raise SimulationDiverged(
                f"non-finite state at step {step_index}, substep {sub}", step_index, sub
            )
    return px, py, vx, vy, in_contact, (fx_last, fy_last), work, max_pen


def _rect_tuples(cfg):
    return [(r.x0, r.y0, r.x1, r.y1) for r in cfg.obstacles]


def clamp_force(u, limit):
    return np.clip(np.asarray(u, dtype=float), -limit, limit)


def step(state, u, cfg):
    """One control period (``1 / control_rate`` s) under a held force ``u``."""
    u = clamp_force(u, cfg.force_limit)
    g = cfg.goal
    px, py = state.s[0] + g[0], state.s[1] + g[1]
    vx, vy = float(state.sdot[0]), float(state.sdot[1])
    if not all(math.isfinite(x) for x in (px, py, vx, vy, u[0], u[1])):
        raise SimulationDiverged("non-finite input state or force")
    px, py, vx, vy, contact, f, _, _ = _contact_step(
        px, py, vx, vy, float(u[0]), float(u[1]), cfg, _rect_tuples(cfg)
    )
    return SimState(
        np.array([px - g[0], py - g[1]]),
        np.array([vx, vy]),
        state.t + 1.0 / cfg.control_rate,
        contact,
        np.array(f),
    )


def reward(s, u, cfg):
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    return -float(np.linalg.norm(s)) - cfg.action_cost_weight * float(u @ u)


def is_success(s, cfg):
    """Seated at least 80 % of the slot depth with lateral error within the
    clearance."""
    return bool(s[1] <= 0.2 * cfg.slot_depth and abs(s[0]) <= cfg.clearance)


@dataclass
class Rollout:
    t: np.ndarray
    s: np.ndarray
    sdot: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    lyapunov: np.ndarray
    in_contact: np.ndarray
    contact_force: np.ndarray
    eig_S: np.ndarray
    eig_D: np.ndarray
    weights: np.ndarray
    total_return: float
    success: bool
    contact_work: float
    max_penetration: float
    diverged: bool = False

    @property
    def states(self):
        return [
            SimState(self.s[i], self.sdot[i], float(self.t[i]), bool(self.in_contact[i]), self.contact_force[i])
            for i in range(len(self.t))
        ]

    @property
    def initial_lyapunov(self):
        return float(self.lyapunov[0])


def rollout(policy, cfg, init_pos=None):
    """Run one episode from rest; actions are recomputed every control step
    and held over the physics substeps."""
    n = cfg.n_steps
    K = policy.K
    g = cfg.goal
    rects = _rect_tuples(cfg)
    p0 = cfg.init_pos if init_pos is None else init_pos
    px, py = float(p0[0]), float(p0[1])
    vx = vy = 0.0

    S = np.empty((n + 1, 2))
    Sd = np.empty((n + 1, 2))
    U = np.empty((n, 2))
    R = np.empty(n)
    V = np.empty(n + 1)
    contact = np.zeros(n + 1, dtype=bool)
    F = np.zeros((n + 1, 2))
    eS = np.empty((n + 1, 2))
    eD = np.empty((n + 1, 2))
    Wt = np.empty((n + 1, K))
    total_work = 0.0
    max_pen = 0.0
    diverged = False

    def record(i):
        s = S[i]
        ci = combined_impedance(policy, s)
        eS[i] = eigvalsh(ci.S_bar)
        eD[i] = eigvalsh(ci.D_bar)
        Wt[i] = ci.weights
        V[i] = lyapunov(policy, cfg.mass, s, Sd[i])

    S[0] = (px - g[0], py - g[1])
    Sd[0] = (vx, vy)
    last = n
    for i in range(n):
        record(i)
        u = clamp_force(control(policy, S[i], Sd[i]), cfg.force_limit)
        U[i] = u
        R[i] = reward(S[i], u, cfg)
        px, py, vx, vy, contact[i + 1], f, work, pen = _contact_step(
            px, py, vx, vy, float(u[0]), float(u[1]), cfg, rects, step_index=i
        )
        F[i + 1] = f
        total_work += work
        max_pen = max(max_pen, pen)
        S[i + 1] = (px - g[0], py - g[1])
        Sd[i + 1] = (vx, vy)
        if math.hypot(S[i + 1, 0], S[i + 1, 1]) > cfg.workspace_limit:
            diverged = True
            last = i + 1
            break
    record(last)
    sl = slice(0, last + 1)
    t = np.arange(last + 1) / cfg.control_rate
    if diverged:
        total = -n * cfg.workspace_limit
        success = False
    else:
        total = float(np.sum(R))
        success = is_success(S[n], cfg)
    return Rollout(
        t=t,
        s=S[sl],
        sdot=Sd[sl],
        actions=U[:last],
        rewards=R[:last],
        lyapunov=V[sl],
        in_contact=contact[sl],
        contact_force=F[sl],
        eig_S=eS[sl],
        eig_D=eD[sl],
        weights=Wt[sl],
        total_return=total,
        success=success,
        contact_work=total_work,
        max_penetration=max_pen,
        diverged=diverged,
    )


def trace_header(K):
    cols = ["t", "s_x", "s_y", "sdot_x", "sdot_y", "u_x", "u_y", "reward", "V", "in_contact"]
    cols += ["eigS_1", "eigS_2", "eigD_1", "eigD_2"]
    cols += [f"w_{k}" for k in range(1, K + 1)]
    return cols


def write_trace(ro, path):
    """Per-control-step CSV of a rollout (one row per applied action)."""
    K = ro.weights.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(K))
        for i in range(len(ro.rewards)):
            row = [ro.t[i], *ro.s[i], *ro.sdot[i], *ro.actions[i], ro.rewards[i], ro.lyapunov[i]]
            row = [repr(float(x)) for x in row] + [str(int(ro.in_contact[i]))]
            row += [repr(float(x)) for x in (*ro.eig_S[i], *ro.eig_D[i], *ro.weights[i])]
            w.writerow(row)


def read_trace(path):
    """Inverse of :func:`write_trace`: dict of column name to float array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in r] for r in reader]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, j] for j, name in enumerate(header)}

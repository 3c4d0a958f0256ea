"""Atomic (empirical-measure) solutions of the Euler-alignment system.

Each atom i carries a fixed mass m_i, a position x_i and a velocity u_i:

    dx_i/dt = u_i,
    du_i/dt = -sum_j m_j D2K(x_i - x_j) (u_i - u_j).

The ARZ form keeps the offset w_i = u_i + sum_j m_j grad K(x_i - x_j) constant
per atom and moves positions with u_i = w_i - (grad K * rho)(x_i).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import _formulas
from ._backend import core
from .errors import DimensionMismatch, SchemeFailure, StepSizeError
from .kernels import Kernel, grad_field, hess_pair_field
from .measures import AtomicMeasure

MASS_TOL = 1e-12


@dataclass
class ParticleState:
    time: float
    positions: np.ndarray
    masses: np.ndarray
    velocities: np.ndarray
    offsets: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(np.asarray(self.positions, dtype=float))
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None].copy()
        n, d = self.positions.shape
        self.masses = np.ascontiguousarray(np.asarray(self.masses, dtype=float).reshape(n))
        self.velocities = np.ascontiguousarray(np.asarray(self.velocities, dtype=float).reshape(n, d))
        if self.offsets is not None:
            self.offsets = np.asarray(self.offsets, dtype=float).reshape(n, d)
        if np.any(self.masses < 0):
            raise ValueError("negative atom mass")

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def measure(self) -> AtomicMeasure:
        return AtomicMeasure(self.positions, self.masses, self.dim, canonical=False)

    def with_offsets(self, k: Kernel) -> "ParticleState":
        return dataclasses.replace(self, offsets=offsets_of(self.positions, self.velocities, self.masses, k))


def from_arrays(positions, velocities, masses=None, time=0.0) -> ParticleState:
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    if masses is None:
        masses = np.full(n, 1.0 / n)
    return ParticleState(time, positions, masses, velocities)


def offsets_of(x, u, m, k: Kernel) -> np.ndarray:
    """w_i = u_i + (grad K * rho)(x_i)."""
    return u + grad_field(k, x, m, x)


def _accel(x, u, m, k: Kernel):
    return -hess_pair_field(k, x, m, u, x, u)


def _check_kernel(state, k):
    if k.dim != state.dim:
        raise DimensionMismatch(f"kernel dim {k.dim} vs state dim {state.dim}")


def _check_finite(*arrays):
    for a in arrays:
        bad = ~np.all(np.isfinite(a.reshape(a.shape[0], -1)), axis=1)
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            raise SchemeFailure(f"non-finite value at atom {idx}", index=idx)


def rhs_u(state: ParticleState, k: Kernel) -> np.ndarray:
    """Per-atom accelerations du_i/dt (the self term j = i vanishes identically)."""
    _check_kernel(state, k)
    _check_finite(state.positions, state.velocities)
    return _accel(state.positions, state.velocities, state.masses, k)


def dt_max(k: Kernel) -> float:
    return np.inf if k.hess_sup_norm == 0 else 0.5 / k.hess_sup_norm


def _guard_dt(dt, k):
    if not (dt > 0 and dt <= dt_max(k) * (1 + 1e-12)):
        raise StepSizeError(f"dt={dt} outside (0, {dt_max(k)}]")


def _rk4_xu(x, u, m, k, dt, quad=False):
    """Classical RK4; with ``quad`` also returns the stage quadrature of the dissipation."""
    a1 = _accel(x, u, m, k)
    x2, u2 = x + 0.5 * dt * u, u + 0.5 * dt * a1
    a2 = _accel(x2, u2, m, k)
    x3, u3 = x + 0.5 * dt * u2, u + 0.5 * dt * a2
    a3 = _accel(x3, u3, m, k)
    x4, u4 = x + dt * u3, u + dt * a3
    a4 = _accel(x4, u4, m, k)
    xn = x + dt / 6.0 * (u + 2 * u2 + 2 * u3 + u4)
    un = u + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    if not quad:
        return xn, un
    return xn, un, _stage_quad(dt, m, k, (x, u), (x2, u2), (x3, u3), (x4, u4))


def _stage_quad(dt, m, k, *stages):
    d = [pair_dissipation(xs, us, m, k) for xs, us in stages]
    return dt / 6.0 * (d[0] + 2 * d[1] + 2 * d[2] + d[3])


def _euler_xu(x, u, m, k, dt, quad=False):
    xn, un = x + dt * u, u + dt * _accel(x, u, m, k)
    return (xn, un, dt * pair_dissipation(x, u, m, k)) if quad else (xn, un)


_SCHEMES = {"rk4": _rk4_xu, "euler": _euler_xu}


def step(state: ParticleState, k: Kernel, dt: float, scheme: str = "rk4") -> ParticleState:
    """One explicit step of the coupled (x, u) system."""
    _check_kernel(state, k)
    _guard_dt(dt, k)
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    x, u = _SCHEMES[scheme](state.positions, state.velocities, state.masses, k, dt)
    _check_finite(x, u)
    return ParticleState(state.time + dt, x, state.masses, u)


def _velocity_from_offsets(x, w, m, k):
    return w - grad_field(k, x, m, x)


def _rk4_offset(x, w, m, k, dt, quad=False):
    # conv_grad is recomputed at every stage; nothing is cached across stages
    v1 = _velocity_from_offsets(x, w, m, k)
    x2 = x + 0.5 * dt * v1
    v2 = _velocity_from_offsets(x2, w, m, k)
    x3 = x + 0.5 * dt * v2
    v3 = _velocity_from_offsets(x3, w, m, k)
    x4 = x + dt * v3
    v4 = _velocity_from_offsets(x4, w, m, k)
    xn = x + dt / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
    if not quad:
        return xn
    return xn, _stage_quad(dt, m, k, (x, v1), (x2, v2), (x3, v3), (x4, v4))


def _euler_offset(x, w, m, k, dt, quad=False):
    v = _velocity_from_offsets(x, w, m, k)
    return (x + dt * v, dt * pair_dissipation(x, v, m, k)) if quad else x + dt * v


_OFFSET_SCHEMES = {"rk4": _rk4_offset, "euler": _euler_offset}


@dataclass
class DiagnosticsRecord:
    time: float
    energy: float
    dissipation: float
    momentum: np.ndarray
    second_moment: float
    first_moment_m: float
    mv_functional: float
    w_drift: float
    bd_functional: float = 0.0
    mass: float = 1.0
    viscous_dissipation: float = 0.0
    # running time integral of dissipation + viscous_dissipation, accumulated
    # by the integrator at every step (not from the recorded samples)
    dissipated: float = 0.0

    def to_row(self) -> dict:
        row = dataclasses.asdict(self)
        mom = np.atleast_1d(row.pop("momentum"))
        for c, v in enumerate(mom):
            row[f"momentum_{c}"] = float(v)
        return row


def mv_weight(z):
    """F(z) = (1 + z^2)/2 * ln(1 + z^2)."""
    z2 = np.asarray(z, dtype=float) ** 2
    return 0.5 * (1.0 + z2) * np.log1p(z2)


def pair_dissipation(x, u, m, k: Kernel) -> float:
    if k.code != _formulas.GENERIC:
        return float(core.pair_dissipation(k.code, k.par, x, u, m))
    h = k.eval_hessK(x[:, None, :] - x[None, :, :])
    dv = u[:, None, :] - u[None, :, :]
    q = np.einsum("ijk,ijkl,ijl->ij", dv, h, dv)
    return 0.5 * float(np.add.reduce(m * np.add.reduce(m[None, :] * q, axis=1)))


def diagnostics(state: ParticleState, k: Kernel, reference_offsets=None,
                dissipated: float = 0.0) -> DiagnosticsRecord:
    x, u, m = state.positions, state.velocities, state.masses
    speed = np.linalg.norm(u, axis=1)
    r = np.linalg.norm(x, axis=1)
    if reference_offsets is None:
        drift = 0.0
    else:
        w = offsets_of(x, u, m, k)
        drift = float(np.max(np.linalg.norm(w - reference_offsets, axis=1), initial=0.0))
    return DiagnosticsRecord(
        time=float(state.time),
        energy=0.5 * float(np.sum(m * speed**2)),
        dissipation=pair_dissipation(x, u, m, k),
        momentum=np.sum(m[:, None] * u, axis=0),
        second_moment=float(np.sum(m * r**2)),
        first_moment_m=float(np.sum(m * r * speed)),
        mv_functional=float(np.sum(m * mv_weight(speed))),
        w_drift=drift,
        mass=float(np.sum(m)),
        dissipated=float(dissipated),
    )


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    offsets: np.ndarray
    masses: np.ndarray
    diagnostics: list
    formulation: str
    dt: float
    record_every: int
    trace_mu: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.trace_mu is None:
            # concentration measure of an atomic solution is identically zero
            self.trace_mu = np.zeros_like(self.times)

    def state(self, r: int) -> ParticleState:
        return ParticleState(float(self.times[r]), self.positions[r], self.masses,
                             self.velocities[r], self.offsets[r])

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(d, name) for d in self.diagnostics])


def _n_steps(t_end, dt):
    if not (t_end > 0 and dt > 0):
        raise StepSizeError("t_end and dt must be positive")
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise StepSizeError(f"t_end={t_end} is not a whole number of steps dt={dt}")
    return n


def simulate(initial: ParticleState, k: Kernel, t_end: float, dt: float,
             formulation: str = "velocity_u", record_every: int = 1,
             scheme: str = "rk4") -> Trajectory:
    """Integrate to ``t_end`` in the velocity (u) or offset (w) formulation."""
    _check_kernel(initial, k)
    _guard_dt(dt, k)
    if formulation not in ("velocity_u", "offset_w"):
        raise ValueError(f"unknown formulation {formulation!r}")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n_steps = _n_steps(t_end, dt)
    m = initial.masses
    total_mass = float(np.sum(m))
    x = initial.positions.copy()
    u = initial.velocities.copy()
    w0 = offsets_of(x, u, m, k)

    times, xs, us, ws, diags = [], [], [], [], []
    dissipated = 0.0

    def record(i, x, u, w):
        st = ParticleState(initial.time + i * dt, x, m, u)
        times.append(st.time)
        xs.append(x.copy())
        us.append(u.copy())
        ws.append(w.copy())
        diags.append(diagnostics(st, k, w0, dissipated))

    record(0, x, u, w0)
    advance = _SCHEMES[scheme] if formulation == "velocity_u" else _OFFSET_SCHEMES[scheme]
    for i in range(1, n_steps + 1):
        if formulation == "velocity_u":
            x, u, q = advance(x, u, m, k, dt, quad=True)
            _check_finite(x, u)
        else:
            x, q = advance(x, w0, m, k, dt, quad=True)
            _check_finite(x)
        dissipated += q
        if float(np.sum(m)) != total_mass:
            raise SchemeFailure("atom masses changed")
        if i % record_every == 0 or i == n_steps:
            if formulation == "velocity_u":
                w = offsets_of(x, u, m, k)
            else:
                w = w0
                u = _velocity_from_offsets(x, w0, m, k)
            record(i, x, u, w)

    return Trajectory(
        times=np.array(times),
        positions=np.array(xs),
        velocities=np.array(us),
        offsets=np.array(ws),
        masses=m.copy(),
        diagnostics=diags,
        formulation=formulation,
        dt=dt,
        record_every=record_every,
    )


def energy_identity_residual(traj: Trajectory, k: Kernel | None = None) -> np.ndarray:
    """|dE/dt + D| at interior records, dE/dt by central differences.

    For even kernels dE/dt = -D exactly, so this vanishes to discretisation
    order; for non-even kernels it does not.
    """
    t = traj.times
    if t.size < 3:
        raise ValueError("need at least 3 records")
    h = np.diff(t)
    if np.max(np.abs(h - h[0])) > 1e-9 * max(h[0], 1e-300):
        raise ValueError("records are not uniformly spaced")
    E = traj.series("energy")
    D = traj.series("dissipation")
    dEdt = (E[2:] - E[:-2]) / (t[2:] - t[:-2])
    return np.abs(dEdt + D[1:-1])


def trapezoid_cumulative(t, f) -> np.ndarray:
    """Running trapezoidal integral of samples f(t), starting at 0."""
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(t)
    out[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(t))
    return out

"""1D periodic finite-volume solver for the viscous approximation.

Solves on the torus [-L/2, L/2)

    d_t rho + d_x(rho u) = 0
    d_t(rho u) + d_x(rho u^2) - (1/N) d_x(rho d_x u)
        + rho u (kappa_L * rho) - rho kappa_L * (rho u) = 0

with kappa = K'' periodised over images.  Convection uses Rusanov fluxes.
Viscosity uses centred differences with interface densities.  The update is
forward Euler inside a Heun (SSP-RK2) step.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import _formulas
from ._backend import core
from .errors import ConfigError, SchemeFailure, StepSizeError
from .kernels import Kernel, from_spec
from .measures import AtomicMeasure, flat_metric, wasserstein
from .particles import DiagnosticsRecord, mv_weight

CFL = 0.4
IMAGE_TAIL_TOL = 1e-12


@dataclass
class GridState:
    L: float
    M: int
    rho: np.ndarray
    mom: np.ndarray
    inv_N: float
    time: float = 0.0
    rho_floor: float = 1e-12

    @property
    def dx(self) -> float:
        return self.L / self.M

    @property
    def centers(self) -> np.ndarray:
        return -0.5 * self.L + (np.arange(self.M) + 0.5) * self.dx

    @property
    def velocity(self) -> np.ndarray:
        return self.mom / np.maximum(self.rho, self.rho_floor)

    @property
    def mass(self) -> float:
        return math.fsum(self.rho) * self.dx

    @property
    def momentum(self) -> float:
        return math.fsum(self.mom) * self.dx


# -- initial data -------------------------------------------------------------

def _velocity_profile(spec, x, L, center=0.0):
    spec = spec or {"kind": "zero"}
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return np.zeros_like(x)
    if kind == "constant":
        return np.full_like(x, float(spec.get("value", 0.0)))
    if kind == "sine":
        # periodic compression with slope -amplitude at the centre
        a = float(spec.get("amplitude", 0.5))
        return -a * L / (2 * np.pi) * np.sin(2 * np.pi * (x - center) / L)
    raise ConfigError(f"unknown velocity profile {kind!r}")


def _gauss(x, c, s):
    return np.exp(-0.5 * ((x - c) / s) ** 2)


def init_grid(profile: str, params: dict | None, L: float, M: int, inv_N: float,
              rho_floor: float | None = None) -> GridState:
    """Unit-mass initial data on the torus.

    Profiles: ``constant`` (optional ``velocity``), ``gaussian_bump_density``
    (``center``, ``width``, ``background``, ``velocity``) and ``two_bumps``
    (``separation``, ``width``, ``speed``; bumps approach each other).
    """
    params = dict(params or {})
    if not L > 0:
        raise ConfigError("L must be positive")
    if M < 4:
        raise ConfigError("M must be >= 4")
    if inv_N < 0:
        raise ConfigError("inv_N must be >= 0")
    dx = L / M
    x = -0.5 * L + (np.arange(M) + 0.5) * dx
    if profile == "constant":
        rho = np.full(M, 1.0 / L)
        mom = rho * float(params.get("velocity", 0.0))
    elif profile == "gaussian_bump_density":
        c = float(params.get("center", 0.0))
        s = float(params.get("width", 0.25))
        if not s > 0:
            raise ConfigError("width must be positive")
        rho = _gauss(x, c, s) + float(params.get("background", 0.0))
        rho /= np.sum(rho) * dx
        mom = rho * _velocity_profile(params.get("velocity"), x, L, c)
    elif profile == "two_bumps":
        if M % 2:
            raise ConfigError("two_bumps needs an even cell count")
        sep = float(params.get("separation", 1.0))
        s = float(params.get("width", 0.2))
        v = float(params.get("speed", 0.5))
        h = M // 2
        xl = x[:h]
        rl = _gauss(xl, -0.5 * sep, s) + _gauss(xl, 0.5 * sep, s) + float(params.get("background", 0.0))
        ml = rl * (-v * np.tanh(xl / s))
        # mirror the left half exactly so total momentum vanishes
        rho = np.concatenate([rl, rl[::-1]])
        mom = np.concatenate([ml, -ml[::-1]])
        scale = 1.0 / (np.sum(rho) * dx)
        rho, mom = rho * scale, mom * scale
    else:
        raise ConfigError(f"unknown grid profile {profile!r}")
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise ConfigError("profile produced a negative or non-finite density")
    if abs(math.fsum(rho) * dx - 1.0) > 1e-10:
        raise ConfigError("mass normalisation failed")
    floor = 1e-10 * float(np.max(rho)) if rho_floor is None else float(rho_floor)
    if not floor > 0:
        raise ConfigError("rho_floor must be positive")
    return GridState(L=float(L), M=int(M), rho=rho, mom=mom, inv_N=float(inv_N),
                     time=0.0, rho_floor=floor)


# -- periodised kernel ----------------------------------------------------------

def periodic_kernel_row(k: Kernel, L: float, M: int, tol: float = IMAGE_TAIL_TOL) -> np.ndarray:
    """kappa_L(q dx) for q = 0..M-1, summing images until the tail is below ``tol``.

    A constant Hessian (quadratic family) is already periodic and is used as is.
    """
    if k.dim != 1:
        raise ConfigError("grid solver needs a 1D kernel")
    dx = L / M
    q = np.arange(M) * dx
    q = np.where(q >= 0.5 * L, q - L, q)  # minimal image in [-L/2, L/2)
    row = k.hess_scalar(q)
    if k.code == _formulas.QUADRATIC:
        return row
    lo, hi = 1, 1
    while True:
        shells = np.arange(lo, hi + 1)
        block = np.zeros(M)
        for chunk in np.array_split(shells, max(1, shells.size // 4096 + 1)):
            if chunk.size == 0:
                continue
            shift = chunk[:, None] * L
            block += np.sum(k.hess_scalar(q[None, :] + shift) + k.hess_scalar(q[None, :] - shift), axis=0)
        row = row + block
        if np.max(np.abs(block)) < 0.5 * tol:
            return row
        lo, hi = hi + 1, 2 * hi
        if hi > 1 << 22:
            raise ConfigError("periodic image sum did not converge")


# -- time stepping -------------------------------------------------------------

def _rhs(rho, mom, inv_N, floor, kappa, dx):
    u = mom / np.maximum(rho, floor)
    fr, fm = core.rusanov_fluxes(rho, u)
    drho = -(fr - np.roll(fr, 1)) / dx
    dmom = -(fm - np.roll(fm, 1)) / dx
    if inv_N > 0:
        rho_face = 0.5 * (rho + np.roll(rho, -1))
        g = inv_N * rho_face * (np.roll(u, -1) - u) / dx
        dmom += (g - np.roll(g, 1)) / dx
    q = rho * u
    A = core.circulant_conv(kappa, rho, dx)
    B = core.circulant_conv(kappa, np.ascontiguousarray(q), dx)
    dmom -= q * A - rho * B
    return drho, dmom


def max_dt(g: GridState, k: Kernel | None = None, kappa=None, cfl: float = CFL) -> float:
    """Largest admissible step: convective, viscous and alignment-rate limits."""
    u = g.velocity
    limits = [g.dx / (np.max(np.abs(u)) + 1e-12)]
    if g.inv_N > 0:
        rho_face = 0.5 * (g.rho + np.roll(g.rho, -1))
        ratio = (rho_face + np.roll(rho_face, 1)) / np.maximum(g.rho, g.rho_floor)
        limits.append(g.dx**2 / (g.inv_N * np.max(ratio)))
    if kappa is None and k is not None:
        kappa = periodic_kernel_row(k, g.L, g.M)
    if kappa is not None:
        rate = np.max(np.abs(core.circulant_conv(kappa, g.rho, g.dx)))
        if rate > 0:
            limits.append(1.0 / rate)
    return cfl * min(limits)


def grid_step(g: GridState, k: Kernel, dt: float, kappa=None) -> GridState:
    """One Heun step; raises on CFL violation, negative density or NaN."""
    if kappa is None:
        kappa = periodic_kernel_row(k, g.L, g.M)
    limit = max_dt(g, kappa=kappa)
    if not (dt > 0 and dt <= limit * (1 + 1e-12)):
        raise StepSizeError(f"dt={dt} violates the CFL bound {limit}")
    dx = g.dx
    r1, m1 = _rhs(g.rho, g.mom, g.inv_N, g.rho_floor, kappa, dx)
    rho1, mom1 = g.rho + dt * r1, g.mom + dt * m1
    r2, m2 = _rhs(rho1, mom1, g.inv_N, g.rho_floor, kappa, dx)
    rho = 0.5 * g.rho + 0.5 * (rho1 + dt * r2)
    mom = 0.5 * g.mom + 0.5 * (mom1 + dt * m2)
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(mom))):
        bad = int(np.flatnonzero(~(np.isfinite(rho) & np.isfinite(mom)))[0])
        raise SchemeFailure(f"non-finite value in cell {bad} at t={g.time + dt}", index=bad)
    if np.any(rho < 0):
        bad = int(np.argmin(rho))
        raise SchemeFailure(f"negative density {rho[bad]:.3e} in cell {bad} at t={g.time + dt}", index=bad)
    return dataclasses.replace(g, rho=rho, mom=mom, time=g.time + dt)


def evolve(g: GridState, k: Kernel, t_end: float, dt: float | None = None,
           record_every: int = 1, cfl: float = CFL):
    """Advance to ``t_end`` with adaptive CFL steps (or fixed ``dt``).

    Returns the final state and diagnostics recorded every ``record_every``
    steps plus the final time.
    """
    kappa = periodic_kernel_row(k, g.L, g.M)
    records = [grid_diagnostics(g, k, kappa)]
    rate = _dissipation_rate(g, kappa)
    dissipated = 0.0
    n = 0
    while g.time < t_end * (1 - 1e-14):
        h = dt if dt is not None else max_dt(g, kappa=kappa, cfl=cfl)
        h = min(h, t_end - g.time)
        g = grid_step(g, k, h, kappa)
        new_rate = _dissipation_rate(g, kappa)
        dissipated += 0.5 * h * (rate + new_rate)
        rate = new_rate
        n += 1
        if n % record_every == 0 or g.time >= t_end * (1 - 1e-14):
            records.append(grid_diagnostics(g, k, kappa, dissipated))
    return g, records


def run_steps(g: GridState, k: Kernel, n_steps: int, dt: float):
    kappa = periodic_kernel_row(k, g.L, g.M)
    for _ in range(n_steps):
        g = grid_step(g, k, dt, kappa)
    return g


# -- diagnostics ---------------------------------------------------------------

def _dissipation_rate(g: GridState, kappa) -> float:
    """Alignment plus viscous dissipation of the current state."""
    u = g.velocity
    rho_face = 0.5 * (g.rho + np.roll(g.rho, -1))
    du = (np.roll(u, -1) - u) / g.dx
    return (float(core.circulant_dissipation(kappa, g.rho, u, g.dx))
            + g.inv_N * float(np.sum(rho_face * du * du)) * g.dx)


def grid_diagnostics(g: GridState, k: Kernel, kappa=None, dissipated: float = 0.0) -> DiagnosticsRecord:
    if kappa is None:
        kappa = periodic_kernel_row(k, g.L, g.M)
    dx = g.dx
    u = g.velocity
    rho = g.rho
    rho_face = 0.5 * (rho + np.roll(rho, -1))
    du = (np.roll(u, -1) - u) / dx
    sq = np.sqrt(rho)
    x = g.centers
    return DiagnosticsRecord(
        time=float(g.time),
        energy=0.5 * float(np.sum(rho * u * u)) * dx,
        dissipation=float(core.circulant_dissipation(kappa, rho, u, dx)),
        viscous_dissipation=g.inv_N * float(np.sum(rho_face * du * du)) * dx,
        momentum=np.array([g.momentum]),
        second_moment=float(np.sum(rho * x * x)) * dx,
        first_moment_m=float(np.sum(np.abs(x) * np.abs(g.mom))) * dx,
        mv_functional=float(np.sum(rho * mv_weight(np.abs(u)))) * dx,
        w_drift=0.0,
        bd_functional=float(np.sum(((np.roll(sq, -1) - sq) / dx) ** 2)) * dx,
        mass=g.mass,
        dissipated=float(dissipated),
    )


# -- grid <-> measures -----------------------------------------------------------

def to_measure(g: GridState):
    """One atom per cell (weight rho_i dx) and the cell velocities."""
    return AtomicMeasure(g.centers[:, None], g.rho * g.dx, 1, canonical=False), g.velocity


def atomized_energy(g: GridState) -> float:
    """0.5 sum |m_i|^2 / w_i over atoms with positive mass (m_i = mom_i dx)."""
    w = g.rho * g.dx
    m = g.mom * g.dx
    pos = w > 0
    return 0.5 * float(np.sum(m[pos] ** 2 / w[pos]))


def quantile_atoms(g: GridState, n: int):
    """Deterministic quantile sampling of rho (piecewise constant per cell).

    Returns positions at the mid-quantiles (k + 1/2)/n and velocities
    interpolated periodically from the cell velocities.
    """
    dx = g.dx
    edges = -0.5 * g.L + np.arange(g.M + 1) * dx
    cdf = np.concatenate([[0.0], np.cumsum(g.rho * dx)])
    cdf /= cdf[-1]
    q = (np.arange(n) + 0.5) / n
    pos = np.interp(q, cdf, edges)
    xc = g.centers
    xp = np.concatenate([[xc[-1] - g.L], xc, [xc[0] + g.L]])
    up = np.concatenate([[g.velocity[-1]], g.velocity, [g.velocity[0]]])
    return pos, np.interp(pos, xp, up)


@dataclass
class StudyRow:
    N: float
    flat: float
    w2: float
    energy: float
    defect: float
    energy_gap_to_reference: float
    error: str = ""

    def to_row(self):
        return dataclasses.asdict(self)


def _run_to(g, k, t_probe, cfl):
    return evolve(g, k, t_probe, cfl=cfl, record_every=10**9)[0]


def vanishing_viscosity_study(scenario: dict, N_list, t_probe: float, reference: str = "inviscid",
                              n_reference_particles: int = 256, cfl: float = CFL, workers: int = 1):
    """Distance of the viscous solution at 1/N to a reference, for each N.

    ``scenario`` keys: ``profile``, ``params``, ``L``, ``M``, ``kernel`` (a
    :class:`Kernel`), optional ``rho_floor``.  ``reference`` is ``inviscid``
    (same grid with 1/N = 0), ``largest`` (the largest N in the list) or
    ``particles`` (quantile-sampled particle run from the same initial data).
    Returns ``(rows, reference_energy)``.
    """
    N_list = [float(N) for N in N_list]
    if len(N_list) < 1:
        raise ConfigError("N_list must not be empty")
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ConfigError("N_list must be strictly increasing")
    k = scenario["kernel"]

    def initial(inv_N):
        return init_grid(scenario["profile"], scenario.get("params"), scenario["L"], scenario["M"],
                         inv_N, scenario.get("rho_floor"))

    jobs = [(N, initial(1.0 / N)) for N in N_list]
    results = _map_runs(k, [g for _, g in jobs], t_probe, cfl, workers)

    if reference == "largest":
        ref_final = results[-1]
        if isinstance(ref_final, Exception):
            raise ref_final
        ref_measure, _ = to_measure(ref_final)
        ref_energy = grid_diagnostics(ref_final, k).energy
    elif reference == "inviscid":
        ref_final = _run_to(initial(0.0), k, t_probe, cfl)
        ref_measure, _ = to_measure(ref_final)
        ref_energy = grid_diagnostics(ref_final, k).energy
    elif reference == "particles":
        from . import particles as P
        g0 = initial(0.0)
        pos, vel = quantile_atoms(g0, n_reference_particles)
        state = P.from_arrays(pos[:, None], vel[:, None])
        dt = min(1e-3, P.dt_max(k))
        n = max(1, int(math.ceil(t_probe / dt)))
        traj = P.simulate(state, k, t_probe, t_probe / n, record_every=n)
        x_end = traj.positions[-1][:, 0]
        x_end = (x_end + 0.5 * g0.L) % g0.L - 0.5 * g0.L
        ref_measure = AtomicMeasure(x_end[:, None], traj.masses, 1)
        ref_energy = traj.diagnostics[-1].energy
    else:
        raise ConfigError(f"unknown reference {reference!r}")

    rows = []
    for (N, _), res in zip(jobs, results):
        if isinstance(res, Exception):
            rows.append(StudyRow(N, math.nan, math.nan, math.nan, math.nan, math.nan, repr(res)))
            continue
        mu, _ = to_measure(res)
        energy = grid_diagnostics(res, k).energy
        rows.append(StudyRow(
            N=N,
            flat=flat_metric(mu, ref_measure).value,
            w2=wasserstein(mu, ref_measure, 2).value,
            energy=energy,
            defect=energy - atomized_energy(res),
            energy_gap_to_reference=ref_energy - energy,
        ))
    return rows, ref_energy


def _single(args):
    spec, g, t_probe, cfl = args
    try:
        k = from_spec(spec)
        return _run_to(g, k, t_probe, cfl)
    except Exception as exc:  # reported per N
        return exc


def _map_runs(k, states, t_probe, cfl, workers):
    args = [(k.spec(), g, t_probe, cfl) for g in states]
    if workers <= 1:
        return [_single(a) for a in args]
    from concurrent.futures import ProcessPoolExecutor
    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_single, args))
    except OSError:  # no process support in this environment
        return [_single(a) for a in args]

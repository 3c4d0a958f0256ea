"""Weak-strong stability: relative entropy, Gronwall bound, density-velocity inequality.

The strong solution used as the comparison (r, v) is either

* ``quadratic_kernel_exact``: for D2K = I in 1D the system reduces to mean
  relaxation along characteristics,
  X(t, X0) = X0 + mbar t + (v0(X0) - mbar)(1 - e^{-t}),
  v(t, X(t, X0)) = mbar + (v0(X0) - mbar) e^{-t},
  which stays a classical solution whenever v0' > -1; or
* ``fine_particle_reference``: a high-resolution particle trajectory whose
  velocity is read off by monotone cubic interpolation.

Constants of the stability estimates are inputs.  Defaults are conservative
roll-ups, and the empirical minimal constants are reported next to them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from . import particles as P
from .errors import ConfigError, ExtrapolationError, MonotonicityError
from .kernels import Kernel, make_builtin
from .measures import AtomicMeasure, flat_metric, total_variation, wasserstein, weighted_total_variation

DEFAULT_C0 = 16.0


def _derivative(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


@dataclass
class StrongSolution:
    kind: str
    r0_quantile: object = None
    v0: object = None
    v0_prime: object = None
    mbar: float = 0.0
    reference: P.Trajectory | None = None

    # -- quadratic_kernel_exact ------------------------------------------------
    def characteristic(self, X0, t):
        X0 = np.asarray(X0, dtype=float)
        return X0 + self.mbar * t + (self.v0(X0) - self.mbar) * (1.0 - math.exp(-t))

    def velocity_along(self, X0, t):
        return self.mbar + (self.v0(np.asarray(X0, dtype=float)) - self.mbar) * math.exp(-t)

    def _invert(self, x, t):
        """X0 with X(t, X0) = x, by bracketed bisection (X is increasing in X0)."""
        x = np.asarray(x, dtype=float)
        width = 1.0 + abs(self.mbar) * t
        lo, hi = x - width, x + width
        for _ in range(200):
            bad_lo = self.characteristic(lo, t) > x
            bad_hi = self.characteristic(hi, t) < x
            if not (np.any(bad_lo) or np.any(bad_hi)):
                break
            width *= 2.0
            lo = np.where(bad_lo, x - width, lo)
            hi = np.where(bad_hi, x + width, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            above = self.characteristic(mid, t) > x
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def velocity_field(self, t, x):
        """v(t, x) at arbitrary positions x (1D)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.kind == "quadratic_kernel_exact":
            return self.velocity_along(self._invert(x, t), t)
        r = _record_index(self.reference, t)
        xs = self.reference.positions[r][:, 0]
        vs = self.reference.velocities[r][:, 0]
        order = np.argsort(xs, kind="stable")
        xs, vs = xs[order], vs[order]
        if np.any(np.diff(xs) <= 0):
            raise MonotonicityError("reference atoms collide; cannot interpolate v")
        if x.min() < xs[0] or x.max() > xs[-1]:
            raise ExtrapolationError(
                f"positions [{x.min():.6g}, {x.max():.6g}] leave the reference support "
                f"[{xs[0]:.6g}, {xs[-1]:.6g}] at t={t}")
        return PchipInterpolator(xs, vs, extrapolate=False)(x)

    def measure(self, t, n_eval=None):
        """Atomic sample of r_t and the velocities on it."""
        if self.kind == "quadratic_kernel_exact":
            m, v = exact_strong_solution(self, t, n_eval or 1000)
            return m, v
        r = _record_index(self.reference, t)
        pts = self.reference.positions[r]
        return (AtomicMeasure(pts, self.reference.masses, pts.shape[1], canonical=False),
                self.reference.velocities[r])

    def velocity_sup_norms(self, T, n_t=21, n_x=2001):
        """(sup |v|, sup |dv/dx|) over [0, T] on quantile samples."""
        if self.kind != "quadratic_kernel_exact":
            vel = self.reference.velocities[..., 0]
            pos = self.reference.positions[..., 0]
            slopes = []
            for r in range(pos.shape[0]):
                o = np.argsort(pos[r])
                dx = np.diff(pos[r][o])
                dv = np.diff(vel[r][o])
                ok = dx > 0
                slopes.append(np.max(np.abs(dv[ok] / dx[ok]), initial=0.0))
            return float(np.max(np.abs(vel))), float(max(slopes))
        X0 = self.r0_quantile((np.arange(n_x) + 0.5) / n_x)
        dv0 = self.v0_prime(X0)
        vmax, gmax = 0.0, 0.0
        for t in np.linspace(0.0, T, n_t):
            e = math.exp(-t)
            vmax = max(vmax, float(np.max(np.abs(self.velocity_along(X0, t)))))
            gmax = max(gmax, float(np.max(np.abs(dv0 * e / (1.0 + dv0 * (1.0 - e))))))
        return vmax, gmax


def _record_index(traj, t):
    idx = np.flatnonzero(np.abs(traj.times - t) <= 1e-12 * max(1.0, abs(t)))
    if idx.size == 0:
        raise ExtrapolationError(f"reference trajectory has no record at t={t}")
    return int(idx[0])


def quadratic_exact(r0_quantile, v0, v0_prime=None, mbar=None, check_samples=4097) -> StrongSolution:
    """Closed-form strong solution for K = |x|^2/2 in 1D.

    ``r0_quantile`` maps (0, 1) to positions (the quantile function of r0).
    ``mbar`` defaults to the mean momentum, the integral of v0(Q(q)) dq.
    """
    if v0_prime is None:
        v0_prime = lambda x: _derivative(v0, np.asarray(x, dtype=float))  # noqa: E731
    q = (np.arange(check_samples) + 0.5) / check_samples
    X0 = np.asarray(r0_quantile(q), dtype=float)
    slopes = np.asarray(v0_prime(X0), dtype=float)
    i = int(np.argmin(slopes))
    if not slopes[i] > -1.0:
        raise MonotonicityError(f"v0' = {slopes[i]:.6g} <= -1 at x = {X0[i]:.6g}", witness=float(X0[i]))
    if mbar is None:
        mbar = quad(lambda s: float(v0(np.asarray(r0_quantile(s), dtype=float))), 0.0, 1.0,
                    epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return StrongSolution("quadratic_kernel_exact", r0_quantile=r0_quantile, v0=v0,
                          v0_prime=v0_prime, mbar=float(mbar))


def fine_particle_reference(traj: P.Trajectory) -> StrongSolution:
    if traj.positions.shape[-1] != 1:
        raise ConfigError("fine_particle_reference is 1D")
    return StrongSolution("fine_particle_reference", reference=traj)


def quantile_atoms(r0_quantile, n):
    return np.asarray(r0_quantile((np.arange(n) + 0.5) / n), dtype=float)


def exact_strong_solution(strong: StrongSolution, t: float, n_eval: int):
    """n_eval quantile atoms of r0 pushed along characteristics to time t.

    Returns the atomic measure (masses 1/n_eval, in quantile order) and the
    exact velocities on it.
    """
    if strong.kind != "quadratic_kernel_exact":
        raise ConfigError("exact_strong_solution needs a quadratic_kernel_exact solution")
    if n_eval < 2:
        raise ConfigError("n_eval must be >= 2")
    X0 = quantile_atoms(strong.r0_quantile, n_eval)
    X = strong.characteristic(X0, t)
    gaps = np.diff(X)
    if np.any(gaps <= 0):
        i = int(np.argmin(gaps))
        raise MonotonicityError(f"characteristic map not increasing near X0={X0[i]:.6g} at t={t}",
                                witness=float(X0[i]))
    m = AtomicMeasure(X[:, None], np.full(n_eval, 1.0 / n_eval), 1, canonical=False)
    return m, strong.velocity_along(X0, t)[:, None]


def strong_residual(strong: StrongSolution, t: float, n_eval: int = 10_000, h: float = 1e-3) -> float:
    """Max residual of the strong system along characteristics (D2K = I).

    Continuity: dX/dt - v(t, X).  Momentum: Dv/Dt + v - mean_r(v).  Time
    derivatives by central differences of step h along each characteristic.
    """
    X0 = quantile_atoms(strong.r0_quantile, n_eval)
    dXdt = (strong.characteristic(X0, t + h) - strong.characteristic(X0, t - h)) / (2 * h)
    v = strong.velocity_along(X0, t)
    dvdt = (strong.velocity_along(X0, t + h) - strong.velocity_along(X0, t - h)) / (2 * h)
    cont = np.max(np.abs(dXdt - v))
    mom = np.max(np.abs(dvdt + v - np.mean(v)))
    return float(max(cont, mom))


# -- relative entropy -----------------------------------------------------------

@dataclass
class StabilityRow:
    time: float
    velocity_error: float
    w2_sq: float
    trace_mu: float = 0.0
    flat: float = math.nan
    w2: float = math.nan


def relative_entropy(sol: P.ParticleState, strong: StrongSolution, n_eval: int | None = None,
                     with_flat: bool = False) -> StabilityRow:
    """velocity error int |v - u|^2 d rho, W2^2(rho, r) and trace(mu) = 0 at sol.time."""
    if sol.dim != 1:
        raise ConfigError("relative_entropy is implemented for 1D states")
    t = float(sol.time)
    v = strong.velocity_field(t, sol.positions[:, 0])
    vel_err = float(np.sum(sol.masses * (v - sol.velocities[:, 0]) ** 2))
    r_t, _ = strong.measure(t, n_eval or sol.n)
    rho_t = AtomicMeasure(sol.positions, sol.masses, 1)
    w2 = wasserstein(rho_t, r_t.canonical(), 2).value
    flat = flat_metric(rho_t, r_t.canonical()).value if with_flat else math.nan
    return StabilityRow(time=t, velocity_error=vel_err, w2_sq=w2 * w2, trace_mu=0.0, flat=flat, w2=w2)


@dataclass
class StabilityReport:
    times: np.ndarray
    velocity_error: np.ndarray
    w2_sq: np.ndarray
    trace_mu: np.ndarray
    flat: np.ndarray
    initial_terms: dict
    C_star: float = math.nan
    gronwall_rhs: np.ndarray | None = None
    margin: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def lhs(self) -> np.ndarray:
        return self.velocity_error + self.trace_mu + self.w2_sq

    def rows(self):
        out = []
        for i, t in enumerate(self.times):
            out.append({
                "t": float(t),
                "velocity_error": float(self.velocity_error[i]),
                "w2_sq": float(self.w2_sq[i]),
                "trace_mu": float(self.trace_mu[i]),
                "gronwall_rhs": float(self.gronwall_rhs[i]) if self.gronwall_rhs is not None else math.nan,
                "margin": float(self.margin[i]) if self.margin is not None else math.nan,
            })
        return out


def initial_terms(rho0: AtomicMeasure, u0, strong: StrongSolution, n_eval: int | None = None) -> dict:
    """vel_err0, ||rho0 - r0||_TV and || |x|^2 (rho0 - r0) ||_TV (atomic r0)."""
    r0, _ = strong.measure(0.0, n_eval or len(rho0))
    r0 = r0.canonical()
    v = strong.velocity_field(0.0, rho0.points[:, 0])
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    return {
        "vel_err0": float(np.sum(rho0.weights * (v - u0) ** 2)),
        "tv0": total_variation(rho0.canonical(), r0),
        "tv_moment0": weighted_total_variation(rho0.canonical(), r0),
    }


def report_from_trajectory(traj: P.Trajectory, strong: StrongSolution, n_eval: int | None = None,
                           with_flat: bool = False) -> StabilityReport:
    rows = [relative_entropy(traj.state(r), strong, n_eval, with_flat) for r in range(traj.times.size)]
    rho0 = AtomicMeasure(traj.positions[0], traj.masses, 1, canonical=False)
    init = initial_terms(rho0, traj.velocities[0], strong, n_eval)
    return StabilityReport(
        times=traj.times.copy(),
        velocity_error=np.array([r.velocity_error for r in rows]),
        w2_sq=np.array([r.w2_sq for r in rows]),
        trace_mu=traj.trace_mu.copy(),
        flat=np.array([r.flat for r in rows]),
        initial_terms=init,
    )


def perturbed_run(strong: StrongSolution, delta: float, n: int = 200, t_end: float = 1.0,
                  dt: float = 1e-3, record_every: int = 50, perturbation: str = "velocity",
                  kernel: Kernel | None = None, with_flat: bool = False):
    """Particle run from the quantile atoms of r0 with perturbed data.

    ``velocity``: u0 = v0 + delta on the same atoms; ``position``: atoms
    shifted by delta with velocities v0 at the shifted points.
    Returns the trajectory and its stability report.
    """
    k = kernel or make_builtin("quadratic", [], 1)
    X0 = quantile_atoms(strong.r0_quantile, n)
    if perturbation == "velocity":
        x0, u0 = X0, strong.v0(X0) + delta
    elif perturbation == "position":
        x0 = X0 + delta
        u0 = strong.v0(x0)
    else:
        raise ConfigError(f"unknown perturbation {perturbation!r}")
    state = P.from_arrays(x0[:, None], np.asarray(u0, dtype=float)[:, None])
    traj = P.simulate(state, k, t_end, dt, record_every=record_every)
    report = report_from_trajectory(traj, strong, n, with_flat)
    report.meta = {"delta": delta, "n": n, "dt": dt, "perturbation": perturbation}
    return traj, report


# -- Gronwall and density-velocity checks ----------------------------------------

# Roundoff floor on the initial distance: an unperturbed run starts at ~1e-33
# and then accumulates ~1e-30 of integrator error, which is not instability.
GRONWALL_BASE_FLOOR = 1e-24


def _gronwall_base(init):
    return max(init["vel_err0"] + init["tv0"] + init["tv_moment0"], GRONWALL_BASE_FLOOR)


def default_c_star(k: Kernel, strong: StrongSolution, T: float, c0: float = DEFAULT_C0) -> float:
    """c0 (1 + ||D2K||_{W1,inf}) (1 + ||v||_{W1,inf})."""
    vmax, gmax = strong.velocity_sup_norms(T)
    return c0 * (1.0 + k.w1inf_norm) * (1.0 + vmax + gmax)


@dataclass
class GronwallResult:
    passed: bool
    rhs: np.ndarray
    margin: np.ndarray
    C_star: float


def gronwall_check(report: StabilityReport, C_star: float, initial: dict | None = None) -> GronwallResult:
    """lhs(t) <= exp(C_star t) (vel_err0 + tv0 + tv_moment0) at every record."""
    if report.times.size == 0:
        raise ValueError("empty stability series")
    init = initial if initial is not None else report.initial_terms
    base = _gronwall_base(init)
    rhs = np.exp(C_star * report.times) * base
    margin = rhs - report.lhs
    report.C_star, report.gronwall_rhs, report.margin = C_star, rhs, margin
    return GronwallResult(bool(np.all(margin >= 0)), rhs, margin, C_star)


def minimal_constant(report: StabilityReport, initial: dict | None = None) -> float:
    """Smallest C with lhs(t) <= exp(C t) * initial at every recorded t > 0."""
    init = initial if initial is not None else report.initial_terms
    base = _gronwall_base(init)
    t, lhs = report.times, report.lhs
    if base <= 0:
        return 0.0 if np.all(lhs <= 0) else math.inf
    pos = t > 0
    if np.any(lhs[~pos] > base):
        return math.inf
    if not np.any(pos):
        return 0.0
    return float(max(0.0, np.max(np.log(np.maximum(lhs[pos], 1e-300) / base) / t[pos])))


def minimal_c0(report: StabilityReport, k: Kernel, strong: StrongSolution, T: float,
               c0: float = DEFAULT_C0, floor: float = 1e-12) -> float:
    """Halve c0 until the Gronwall check fails; return the last passing c0."""
    passing = math.nan
    while c0 > floor:
        if not gronwall_check(report, default_c_star(k, strong, T, c0)).passed:
            break
        passing = c0
        c0 *= 0.5
    gronwall_check(report, default_c_star(k, strong, T, DEFAULT_C0))
    return passing


@dataclass
class FigalliKangResult:
    margin: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    informative: bool
    tv0: float
    tv_moment0: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margin >= 0))


def figalli_kang_check(report: StabilityReport, C_v: float = DEFAULT_C0, C_T: float = DEFAULT_C0,
                       C_m: float = DEFAULT_C0, T: float | None = None) -> FigalliKangResult:
    """W2^2 <= C_v e^T vel_err + C_T ||rho0 - r0||_TV + C_m || |x|^2 (rho0 - r0) ||_TV.

    Disjoint initial supports make the TV terms plain mass sums; the check then
    holds trivially and is flagged as uninformative.
    """
    if report.times.size == 0:
        raise ValueError("empty trajectory")
    T = float(report.times[-1]) if T is None else T
    tv0 = report.initial_terms["tv0"]
    tvm = report.initial_terms["tv_moment0"]
    rhs = C_v * math.exp(T) * report.velocity_error + C_T * tv0 + C_m * tvm
    lhs = report.w2_sq
    return FigalliKangResult(margin=rhs - lhs, lhs=lhs, rhs=rhs,
                             informative=tv0 < 2.0 - 1e-9, tv0=tv0, tv_moment0=tvm)

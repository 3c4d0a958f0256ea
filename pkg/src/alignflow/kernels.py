"""Interaction potentials K with analytic gradient and Hessian.

A :class:`Kernel` bundles vectorised evaluators for ``K``, ``grad K`` and
``D2K`` together with declared structural metadata (evenness, positive
semi-definiteness, sup-norm and Lipschitz bounds of the Hessian).  The
metadata is checked by seeded sampling in :func:`validate`, never assumed.

Convolutions against weighted point clouds are summed in support order so a
canonicalised measure always gives the same bits.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from . import _formulas
from ._backend import core
from .errors import ConfigError, DimensionMismatch
from .rng import SplitMix64

BUILTIN_NAMES = ("quadratic", "smoothed_norm", "gaussian_bump", "tilted_quadratic", "custom_table")


@dataclass(frozen=True)
class KernelFlags:
    even: bool
    psd: bool


@dataclass(frozen=True)
class Kernel:
    name: str
    dim: int
    eval_K: Callable[[np.ndarray], np.ndarray]
    eval_gradK: Callable[[np.ndarray], np.ndarray]
    eval_hessK: Callable[[np.ndarray], np.ndarray]
    hess_sup_norm: float
    hess_lipschitz: float
    flags: KernelFlags
    params: dict = field(default_factory=dict)
    code: int = _formulas.GENERIC
    par: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def with_flags(self, **kw) -> "Kernel":
        """Copy with overridden flags (used to build deliberately false declarations)."""
        return dataclasses.replace(self, flags=dataclasses.replace(self.flags, **kw))

    def with_bounds(self, hess_sup_norm=None, hess_lipschitz=None) -> "Kernel":
        return dataclasses.replace(
            self,
            hess_sup_norm=self.hess_sup_norm if hess_sup_norm is None else float(hess_sup_norm),
            hess_lipschitz=self.hess_lipschitz if hess_lipschitz is None else float(hess_lipschitz),
        )

    def hess_scalar(self, x) -> np.ndarray:
        """K'' for 1D kernels, evaluated on an array of positions."""
        if self.dim != 1:
            raise DimensionMismatch("hess_scalar needs a 1D kernel")
        x = np.asarray(x, dtype=float)
        return self.eval_hessK(x[..., None])[..., 0, 0]

    @property
    def w1inf_norm(self) -> float:
        """||D2K||_{W^{1,inf}} from the declared bounds."""
        return self.hess_sup_norm + self.hess_lipschitz

    def spec(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "dim": self.dim}


def _param(params, key, index, default=None):
    if isinstance(params, dict):
        value = params.get(key, default)
    else:
        params = list(params or [])
        value = params[index] if index < len(params) else default
    if value is None:
        raise ConfigError(f"kernel parameter '{key}' is required")
    return value


def _closed_form(name, code, par, dim, sup, lip, even, psd, params):
    p = np.asarray(par, dtype=float)
    return Kernel(
        name=name,
        dim=dim,
        eval_K=lambda z: _formulas.potential(code, p, z),
        eval_gradK=lambda z: _formulas.gradient(code, p, z),
        eval_hessK=lambda z: _formulas.hessian(code, p, z),
        hess_sup_norm=float(sup),
        hess_lipschitz=float(lip),
        flags=KernelFlags(even=even, psd=psd),
        params=params,
        code=code,
        par=p,
    )


def make_builtin(name: str, params=None, dim: int = 1) -> Kernel:
    """Build a catalogue kernel.

    ``params`` is either a dict keyed by parameter name or a positional list.

    * ``quadratic``: K = scale/2 |x|^2 (``scale`` defaults to 1; 0 gives the zero kernel)
    * ``smoothed_norm``: K = sqrt(epsilon^2 + |x|^2)
    * ``gaussian_bump``: K = -exp(-|x|^2 / (2 sigma^2)); Hessian not PSD
    * ``tilted_quadratic``: K = |x|^2/2 + tilt * sum_k (x_k - sin x_k); not even
    * ``custom_table``: 1D, tabulated K'' (keys ``x``, ``kpp``) with cubic interpolation
    """
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise ConfigError(f"kernel dim must be a positive integer, got {dim!r}")
    dim = int(dim)
    if name == "quadratic":
        c = float(_param(params, "scale", 0, 1.0))
        return _closed_form(name, _formulas.QUADRATIC, [c], dim, abs(c), 0.0,
                            True, c >= 0, {"scale": c})
    if name == "smoothed_norm":
        eps = float(_param(params, "epsilon", 0))
        if not eps > 0:
            raise ConfigError(f"smoothed_norm needs epsilon > 0, got {eps}")
        # |d/dx D2K| <= 3/eps^2 (radial third derivative peaks at 0.86/eps^2 in 1D)
        return _closed_form(name, _formulas.SMOOTHED_NORM, [eps], dim, 1.0 / eps,
                            3.0 / eps**2, True, True, {"epsilon": eps})
    if name == "gaussian_bump":
        sigma = float(_param(params, "sigma", 0))
        if not sigma > 0:
            raise ConfigError(f"gaussian_bump needs sigma > 0, got {sigma}")
        return _closed_form(name, _formulas.GAUSSIAN_BUMP, [sigma], dim, 1.0 / sigma**2,
                            2.0 / sigma**3, True, False, {"sigma": sigma})
    if name == "tilted_quadratic":
        a = float(_param(params, "tilt", 0, 0.5))
        return _closed_form(name, _formulas.TILTED_QUADRATIC, [a], dim, 1.0 + abs(a),
                            abs(a), a == 0.0, abs(a) <= 1.0, {"tilt": a})
    if name == "custom_table":
        return _custom_table(params, dim)
    raise ConfigError(f"unknown kernel '{name}' (known: {', '.join(BUILTIN_NAMES)})")


def _custom_table(params, dim):
    if dim != 1:
        raise ConfigError("custom_table kernels are 1D only")
    if not isinstance(params, dict) or "x" not in params or "kpp" not in params:
        raise ConfigError("custom_table needs params {'x': [...], 'kpp': [...]}")
    xs = np.asarray(params["x"], dtype=float)
    kpp = np.asarray(params["kpp"], dtype=float)
    if xs.ndim != 1 or xs.shape != kpp.shape or xs.size < 4:
        raise ConfigError("custom_table needs matching 1D arrays x, kpp with >= 4 entries")
    if np.any(np.diff(xs) <= 0):
        raise ConfigError("custom_table x must be strictly increasing")
    spline = CubicSpline(xs, kpp)
    d1 = spline.antiderivative(1)
    d2 = spline.antiderivative(2)
    lo, hi = xs[0], xs[-1]
    anchor = 0.0 if lo <= 0.0 <= hi else lo
    g0, k0 = float(d1(anchor)), float(d2(anchor))

    def grad_in(x):
        return d1(x) - g0

    def pot_in(x):
        return d2(x) - k0 - g0 * (x - anchor)

    g_lo, g_hi = grad_in(lo), grad_in(hi)
    p_lo, p_hi = pot_in(lo), pot_in(hi)

    # outside the table K'' = 0, so K' is frozen and K continues linearly
    def hess(z):
        x = np.asarray(z, dtype=float)[..., 0]
        inside = (x >= lo) & (x <= hi)
        out = np.where(inside, spline(np.clip(x, lo, hi)), 0.0)
        return out[..., None, None]

    def grad(z):
        x = np.asarray(z, dtype=float)[..., 0]
        xc = np.clip(x, lo, hi)
        out = np.where(x < lo, g_lo, np.where(x > hi, g_hi, grad_in(xc)))
        return out[..., None]

    def pot(z):
        x = np.asarray(z, dtype=float)[..., 0]
        xc = np.clip(x, lo, hi)
        return np.where(x < lo, p_lo + g_lo * (x - lo),
                        np.where(x > hi, p_hi + g_hi * (x - hi), pot_in(xc)))

    fine = np.linspace(lo, hi, 16 * xs.size + 1)
    vals = spline(fine)
    even = bool(np.allclose(xs, -xs[::-1], rtol=0, atol=1e-12)
                and np.allclose(kpp, kpp[::-1], rtol=0, atol=1e-12))
    return Kernel(
        name="custom_table",
        dim=1,
        eval_K=pot,
        eval_gradK=grad,
        eval_hessK=hess,
        hess_sup_norm=float(np.max(np.abs(vals))),
        hess_lipschitz=float(np.max(np.abs(spline.derivative(1)(fine)))),
        flags=KernelFlags(even=even, psd=bool(vals.min() >= -1e-14)),
        params={"x": xs.tolist(), "kpp": kpp.tolist()},
    )


def from_spec(spec: dict) -> Kernel:
    """Kernel from a JSON object ``{"name", "params", "dim"}``.

    Optional ``flags`` ({"even", "psd"}) and ``bounds`` ({"hess_sup_norm",
    "hess_lipschitz"}) replace the derived declarations, so that
    :func:`validate` can be pointed at a user's claims.
    """
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("kernel spec must be an object with a 'name'")
    k = make_builtin(spec["name"], spec.get("params", {}), spec.get("dim", 1))
    flags = spec.get("flags")
    if flags:
        unknown = set(flags) - {"even", "psd"}
        if unknown:
            raise ConfigError(f"unknown kernel flags {sorted(unknown)}")
        k = k.with_flags(**{key: bool(v) for key, v in flags.items()})
    bounds = spec.get("bounds")
    if bounds:
        k = k.with_bounds(bounds.get("hess_sup_norm"), bounds.get("hess_lipschitz"))
    return k


# -- validation ---------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    witness: list | None = None
    skipped: bool = False

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ValidationReport:
    kernel: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"kernel": self.kernel, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks]}


def _box(sample_box, dim):
    lo, hi = sample_box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,)).copy()
    if np.any(hi <= lo):
        raise ConfigError("sample box is degenerate")
    return lo, hi


def _worst(values, xs, bad):
    """Largest violation with its witness point (0 and None if no samples)."""
    i = int(np.argmax(values))
    return float(values[i]), xs[i].tolist(), bool(bad(values[i]))


def validate(k: Kernel, sample_box=(-5.0, 5.0), n_samples: int = 256, seed: int = 0,
             fd_step: float = 1e-4, fd_tol: float = 1e-6) -> ValidationReport:
    """Seeded Monte-Carlo check of the declared kernel properties.

    Failures are report entries; nothing is raised for a failing kernel.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    lo, hi = _box(sample_box, k.dim)
    rng = SplitMix64(seed)
    xs = lo + (hi - lo) * rng.random((n_samples, k.dim))
    xis = rng.normal((n_samples, k.dim))
    H = k.eval_hessK(xs)
    hnorm = np.linalg.norm(H, axis=(-2, -1))
    checks = []

    asym = np.linalg.norm(H - np.swapaxes(H, -1, -2), axis=(-2, -1)) - 1e-12 * hnorm
    v, w, bad = _worst(asym, xs, lambda a: a > 0)
    checks.append(Check("symmetric", not bad, max(v, 0.0), w if bad else None))

    if k.flags.even:
        diff = np.linalg.norm(k.eval_hessK(-xs) - H, axis=(-2, -1)) - 1e-12 * np.maximum(hnorm, 1.0)
        v, w, bad = _worst(diff, xs, lambda a: a > 0)
        checks.append(Check("even", not bad, max(v, 0.0), w if bad else None))
    else:
        checks.append(Check("even", True, 0.0, skipped=True))

    if k.flags.psd:
        xin = xis / np.linalg.norm(xis, axis=-1, keepdims=True)
        quad = np.einsum("nk,nkl,nl->n", xin, H, xin)
        mins = np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, -1, -2)))[..., 0]
        neg = -np.minimum(quad, mins)
        v, w, bad = _worst(neg, xs, lambda a: a > 1e-10)
        checks.append(Check("psd", not bad, max(v, 0.0), w if bad else None))
    else:
        checks.append(Check("psd", True, 0.0, skipped=True))

    fd = np.empty_like(H)
    for c in range(k.dim):
        e = np.zeros(k.dim)
        e[c] = fd_step
        fd[..., :, c] = (k.eval_gradK(xs + e) - k.eval_gradK(xs - e)) / (2 * fd_step)
    err = np.max(np.abs(fd - H), axis=(-2, -1))
    v, w, bad = _worst(err, xs, lambda a: a > fd_tol)
    checks.append(Check("finite_difference", not bad, v, w if bad else None))

    spec_norm = np.linalg.norm(H, ord=2, axis=(-2, -1))
    excess = spec_norm - k.hess_sup_norm
    v, w, bad = _worst(excess, xs, lambda a: a > 1e-10)
    checks.append(Check("sup_norm", not bad, max(v, 0.0), w if bad else None))

    g0 = np.linalg.norm(k.eval_gradK(np.zeros((1, k.dim)))[0])
    C = max(g0, k.hess_sup_norm)
    growth = np.linalg.norm(k.eval_gradK(xs), axis=-1) - C * (1 + np.linalg.norm(xs, axis=-1))
    v, w, bad = _worst(growth, xs, lambda a: a > 1e-12)
    checks.append(Check("linear_growth", not bad, max(v, 0.0), w if bad else None))

    return ValidationReport(kernel=k.name, checks=checks)


# -- convolutions against weighted point clouds --------------------------------

def _cloud(mu, dim):
    pts = np.ascontiguousarray(np.asarray(mu.points, dtype=float).reshape(-1, dim))
    w = np.ascontiguousarray(np.asarray(mu.weights, dtype=float))
    if pts.shape[0] != w.shape[0]:
        raise DimensionMismatch("points and weights differ in length")
    return pts, w


def grad_field(k: Kernel, src, w, at) -> np.ndarray:
    """Sum_j w_j grad K(a - x_j) for every row a of ``at``."""
    at = np.ascontiguousarray(at, dtype=float)
    if src.shape[0] == 0:
        return np.zeros_like(at)
    if k.code != _formulas.GENERIC:
        return core.grad_conv(k.code, k.par, at, src, w)
    g = k.eval_gradK(at[:, None, :] - src[None, :, :])
    return np.add.reduce(w[None, :, None] * g, axis=1)


def hess_pair_field(k: Kernel, src, w, u_src, at, u_at) -> np.ndarray:
    """Sum_j w_j D2K(a - x_j)(u_a - u_j) for every row a of ``at``."""
    at = np.ascontiguousarray(at, dtype=float)
    u_at = np.ascontiguousarray(u_at, dtype=float)
    if src.shape[0] == 0:
        return np.zeros_like(at)
    if k.code != _formulas.GENERIC:
        return core.hess_pair(k.code, k.par, at, u_at, src, w, np.ascontiguousarray(u_src))
    h = k.eval_hessK(at[:, None, :] - src[None, :, :])
    dv = u_at[:, None, :] - u_src[None, :, :]
    hv = np.einsum("pjkl,pjl->pjk", h, dv)
    return np.add.reduce(w[None, :, None] * hv, axis=1)


def conv_grad(k: Kernel, mu, x) -> np.ndarray:
    """Discrete ``grad K * mu`` at the point ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if mu.dim != k.dim or x.shape != (k.dim,):
        raise DimensionMismatch(f"kernel dim {k.dim}, measure dim {mu.dim}, point shape {x.shape}")
    pts, w = _cloud(mu, k.dim)
    return grad_field(k, pts, w, x[None, :])[0]


def conv_hess_pair(k: Kernel, mu, vel, x, u_x) -> np.ndarray:
    """Alignment force density sum_j w_j D2K(x - x_j)(u_x - u_j)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u_x = np.atleast_1d(np.asarray(u_x, dtype=float))
    if mu.dim != k.dim or x.shape != (k.dim,) or u_x.shape != (k.dim,):
        raise DimensionMismatch("dimension mismatch in conv_hess_pair")
    pts, w = _cloud(mu, k.dim)
    vel = np.asarray(vel, dtype=float).reshape(-1, k.dim)
    if vel.shape[0] != pts.shape[0]:
        raise DimensionMismatch(f"velocity field has {vel.shape[0]} rows, support has {pts.shape[0]}")
    return hess_pair_field(k, pts, w, vel, x[None, :], u_x[None, :])[0]

"""Atomic measures and metrics between them.

Metrics: the flat (bounded-Lipschitz) distance, Wasserstein-1/2, total
variation, and the moment functionals.

The flat metric is a sup over C^1 test functions with ``|phi| <= 1`` and
``|grad phi| <= 1``.  On atomic measures only the values of phi on the merged
support matter.  Any node assignment with ``|phi_i| <= 1`` and
``|phi_i - phi_j| <= |x_i - x_j|`` extends to a 1-Lipschitz function on R^d
bounded by 1 (McShane extension truncated to [-1, 1]).  Mollifying that
extension gives a C^1 test function at arbitrarily small loss.  So the sup is
exactly the value of the finite node LP solved below.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .errors import ConfigError, DimensionMismatch, NumericalError, SupportTooLarge

MERGE_TOL = 1e-12
PROB_TOL = 1e-10
FLAT_MAX_SUPPORT = 512
LP_MAX_CELLS = 65536


class AtomicMeasure:
    """Finite weighted point cloud in R^d.

    By default the support is canonicalised: points sorted lexicographically
    and atoms closer than ``MERGE_TOL`` (max-norm) merged with summed weights.
    Pass ``canonical=False`` to keep the given order (e.g. Lagrangian particles).
    """

    def __init__(self, points, weights, dim=None, canonical=True, signed=False):
        w = np.asarray(weights, dtype=float).reshape(-1)
        p = np.asarray(points, dtype=float)
        if dim is None:
            dim = p.shape[-1] if p.ndim == 2 else 1
        p = p.reshape(-1, dim) if p.size else np.zeros((0, dim))
        if p.shape[0] != w.shape[0]:
            raise DimensionMismatch(f"{p.shape[0]} points but {w.shape[0]} weights")
        if not signed and np.any(w < 0):
            raise ValueError("unsigned measure has negative weights")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(w))):
            raise ValueError("non-finite atom data")
        self.dim = int(dim)
        self.signed = signed
        if canonical:
            p, w = _canonicalize(p, w)
        self.points = p
        self.weights = w

    def __len__(self):
        return self.weights.shape[0]

    def __repr__(self):
        return f"AtomicMeasure(dim={self.dim}, n={len(self)}, mass={self.total_mass:.6g})"

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def is_probability(self, tol=PROB_TOL) -> bool:
        return abs(self.total_mass - 1.0) <= tol

    def scaled(self, c) -> "AtomicMeasure":
        return AtomicMeasure(self.points, c * self.weights, self.dim, canonical=False,
                             signed=self.signed or c < 0)

    def canonical(self) -> "AtomicMeasure":
        return AtomicMeasure(self.points, self.weights, self.dim, signed=self.signed)

    # serialisation: floats are written with repr(), the shortest round-trip form
    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "points": self.points.tolist(),
                           "weights": self.weights.tolist()}, sort_keys=True)

    @classmethod
    def from_json(cls, text, canonical=True) -> "AtomicMeasure":
        obj = json.loads(text) if isinstance(text, str) else text
        try:
            return cls(np.asarray(obj["points"], dtype=float).reshape(-1, obj["dim"]),
                       obj["weights"], dim=obj["dim"], canonical=canonical)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed measure JSON: {exc}") from exc

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(self.dim)] + ["weight"])
        for p, w in zip(self.points, self.weights):
            writer.writerow([repr(float(v)) for v in p] + [repr(float(w))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, canonical=True) -> "AtomicMeasure":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        dim = len(header) - 1
        data = np.array([[float(v) for v in r] for r in body]).reshape(-1, dim + 1)
        return cls(data[:, :dim], data[:, dim], dim=dim, canonical=canonical)


def _canonicalize(p, w):
    if p.shape[0] == 0:
        return p, w
    order = np.lexsort(p.T[::-1])
    p, w = p[order], w[order]
    keep_p, keep_w = [p[0]], [w[0]]
    for i in range(1, p.shape[0]):
        if np.max(np.abs(p[i] - keep_p[-1])) <= MERGE_TOL:
            keep_w[-1] = keep_w[-1] + w[i]
        else:
            keep_p.append(p[i])
            keep_w.append(w[i])
    return np.array(keep_p), np.array(keep_w)


def dirac(x, mass=1.0) -> AtomicMeasure:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return AtomicMeasure(x[None, :], [mass], dim=x.shape[0])


def _difference(mu, nu):
    """Canonical signed measure mu - nu on the merged support."""
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"measure dims differ: {mu.dim} vs {nu.dim}")
    return AtomicMeasure(np.vstack([mu.points, nu.points]),
                         np.concatenate([mu.weights, -nu.weights]),
                         dim=mu.dim, signed=True)


@dataclass
class MetricReport:
    value: float
    method: str
    lp_status: dict = field(default_factory=dict)

    def __float__(self):
        return self.value


def _pairwise(points):
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _lp_gap(res, c, b_ub, b_eq, lo, hi):
    """|primal - dual| objective from HiGHS marginals."""
    dual = 0.0
    if b_ub is not None:
        dual += float(np.dot(res.ineqlin.marginals, b_ub))
    if b_eq is not None:
        dual += float(np.dot(res.eqlin.marginals, b_eq))
    if lo is not None:
        dual += float(np.dot(res.lower.marginals, lo))
    if hi is not None:
        dual += float(np.dot(res.upper.marginals, hi))
    return abs(float(res.fun) - dual)


def flat_metric(mu: AtomicMeasure, nu: AtomicMeasure, max_support=FLAT_MAX_SUPPORT) -> MetricReport:
    """Exact flat distance via the node LP on the merged support."""
    diff = _difference(mu, nu)
    n = len(diff)
    if n > max_support:
        raise SupportTooLarge(f"merged support {n} exceeds {max_support}")
    c = diff.weights
    if n == 0 or not np.any(c):
        return MetricReport(0.0, "lp_exact", {"iterations": 0, "gap": 0.0, "box_active": False})
    if n == 1:
        return MetricReport(float(abs(c[0])), "closed_form",
                            {"iterations": 0, "gap": 0.0, "box_active": True})
    pts = diff.points
    if diff.dim == 1:
        # on a line, Lipschitz constraints between neighbours imply all pairs
        i = np.arange(n - 1)
        j = i + 1
        dist = pts[j, 0] - pts[i, 0]
    else:
        i, j = np.triu_indices(n, k=1)
        dist = _pairwise(pts)[i, j]
    m = i.shape[0]
    rows = np.concatenate([np.arange(m), np.arange(m), m + np.arange(m), m + np.arange(m)])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([np.ones(m), -np.ones(m), np.ones(m), -np.ones(m)])
    A = coo_matrix((vals, (rows, cols)), shape=(2 * m, n)).tocsr()
    b = np.concatenate([dist, dist])
    lo, hi = -np.ones(n), np.ones(n)
    res = linprog(-c, A_ub=A, b_ub=b, bounds=np.column_stack([lo, hi]), method="highs-ds")
    if res.status != 0:
        raise NumericalError(f"flat-metric LP failed: {res.message}")
    phi = res.x
    value = float(np.dot(c, phi))
    gap = _lp_gap(res, -c, b, None, lo, hi)
    box_active = bool(np.any(np.abs(res.lower.marginals) > 1e-12)
                      or np.any(np.abs(res.upper.marginals) > 1e-12))
    return MetricReport(max(value, 0.0), "lp_exact",
                        {"iterations": int(res.nit), "gap": gap, "box_active": box_active})


def _check_probability(mu, nu):
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"measure dims differ: {mu.dim} vs {nu.dim}")
    for name, m in (("first", mu), ("second", nu)):
        if not m.is_probability():
            raise ValueError(f"{name} measure has mass {m.total_mass!r}, expected 1")


def wasserstein_quantile_1d(mu, nu, p):
    """p-th power of W_p by the monotone (merged-CDF) coupling on the line."""
    ia = np.argsort(mu.points[:, 0], kind="stable")
    ib = np.argsort(nu.points[:, 0], kind="stable")
    xa, wa = mu.points[ia, 0], mu.weights[ia]
    xb, wb = nu.points[ib, 0], nu.weights[ib]
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca /= ca[-1]
    cb /= cb[-1]
    levels = np.union1d(np.concatenate([[0.0], ca]), cb)
    levels = levels[(levels >= 0.0) & (levels <= 1.0)]
    dt = np.diff(levels)
    mid = 0.5 * (levels[:-1] + levels[1:])
    ka = np.minimum(np.searchsorted(ca, mid, side="left"), xa.size - 1)
    kb = np.minimum(np.searchsorted(cb, mid, side="left"), xb.size - 1)
    return float(np.sum(dt * np.abs(xa[ka] - xb[kb]) ** p))


def wasserstein_lp(mu, nu, p):
    """p-th power of W_p by the exact transport LP; also returns solver status."""
    n, m = len(mu), len(nu)
    if n * m > LP_MAX_CELLS:
        raise SupportTooLarge(f"transport LP of {n}x{m} exceeds {LP_MAX_CELLS} cells")
    cost = _pairwise_cross(mu.points, nu.points) ** p
    rows = np.concatenate([np.repeat(np.arange(n), m), n + np.tile(np.arange(m), n)])
    cols = np.concatenate([np.arange(n * m), np.arange(n * m)])
    A = coo_matrix((np.ones(2 * n * m), (rows, cols)), shape=(n + m, n * m)).tocsr()
    b = np.concatenate([mu.weights, nu.weights])
    res = linprog(cost.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise NumericalError(f"transport LP failed: {res.message}")
    value = float(np.dot(cost.ravel(), res.x))
    gap = _lp_gap(res, cost.ravel(), None, b, np.zeros(n * m), None)
    return max(value, 0.0), {"iterations": int(res.nit), "gap": gap}


def _pairwise_cross(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def wasserstein(mu: AtomicMeasure, nu: AtomicMeasure, p: int = 2, method: str | None = None) -> MetricReport:
    """Exact W_p for p in {1, 2}; quantile coupling in 1D, transport LP otherwise."""
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    _check_probability(mu, nu)
    if method is None:
        method = "quantile_1d" if mu.dim == 1 else "lp_exact"
    if method == "quantile_1d":
        if mu.dim != 1:
            raise DimensionMismatch("quantile coupling needs 1D measures")
        return MetricReport(wasserstein_quantile_1d(mu, nu, p) ** (1.0 / p), "quantile_1d")
    if method == "lp_exact":
        value, status = wasserstein_lp(mu, nu, p)
        return MetricReport(value ** (1.0 / p), "lp_exact", status)
    raise ValueError(f"unknown method {method!r}")


def total_variation(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """sum over the merged canonical support of |mu_i - nu_i|."""
    return float(np.sum(np.abs(_difference(mu, nu).weights)))


def weighted_total_variation(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """|| |x|^2 (mu - nu) ||_TV for atomic measures."""
    diff = _difference(mu, nu)
    r2 = np.sum(diff.points**2, axis=-1)
    return float(np.sum(r2 * np.abs(diff.weights)))


def moment(mu: AtomicMeasure, order: int = 2, weight_field=None) -> float:
    """sum w_i |x_i|^order, or sum w_i |x_i| |v_i| when a per-atom field v is given."""
    r = np.linalg.norm(mu.points, axis=-1)
    if weight_field is not None:
        v = np.asarray(weight_field, dtype=float).reshape(len(mu), -1)
        if v.shape[0] != len(mu):
            raise DimensionMismatch("weight field length differs from support size")
        return float(np.sum(mu.weights * r * np.linalg.norm(v, axis=-1)))
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    return float(np.sum(mu.weights * r**order))

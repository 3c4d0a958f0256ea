# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise sums and finite-volume loops.

Reductions run in ascending source index so results are bitwise reproducible.
Family codes match ``alignflow._formulas``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, sin, cos

cnp.import_array()

DEF MAXD = 16


cdef inline void _hess_apply(int code, const double* par, const double* z,
                             const double* v, double* out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t k
    cdef double r2 = 0.0, zv = 0.0, s, e, s2
    if code == 1:
        for k in range(d):
            out[k] = par[0] * v[k]
        return
    if code == 4:
        for k in range(d):
            out[k] = (1.0 + par[0] * sin(z[k])) * v[k]
        return
    for k in range(d):
        r2 += z[k] * z[k]
        zv += z[k] * v[k]
    if code == 2:
        s = sqrt(par[0] * par[0] + r2)
        for k in range(d):
            out[k] = v[k] / s - z[k] * zv / (s * s * s)
    elif code == 3:
        s2 = par[0] * par[0]
        e = exp(-r2 / (2.0 * s2))
        for k in range(d):
            out[k] = e * (v[k] / s2 - z[k] * zv / (s2 * s2))


cdef inline void _grad(int code, const double* par, const double* z,
                       double* out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t k
    cdef double r2 = 0.0, s, e, s2
    if code == 1:
        for k in range(d):
            out[k] = par[0] * z[k]
        return
    if code == 4:
        for k in range(d):
            out[k] = z[k] + par[0] * (1.0 - cos(z[k]))
        return
    for k in range(d):
        r2 += z[k] * z[k]
    if code == 2:
        s = sqrt(par[0] * par[0] + r2)
        for k in range(d):
            out[k] = z[k] / s
    elif code == 3:
        s2 = par[0] * par[0]
        e = exp(-r2 / (2.0 * s2))
        for k in range(d):
            out[k] = z[k] * (e / s2)


def _check(int code, Py_ssize_t d):
    if code < 1 or code > 4:
        raise ValueError(f"compiled core has no family code {code}")
    if d > MAXD:
        raise ValueError(f"compiled core supports dim <= {MAXD}")


def grad_conv(int code, double[::1] par, double[:, ::1] pts,
              double[:, ::1] src, double[::1] w):
    """Sum_j w_j grad K(p - x_j) for every evaluation point p."""
    cdef Py_ssize_t P = pts.shape[0], N = src.shape[0], d = pts.shape[1]
    cdef Py_ssize_t p, j, k
    cdef double z[MAXD]
    cdef double g[MAXD]
    _check(code, d)
    out_arr = np.zeros((P, d))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for p in range(P):
            for j in range(N):
                for k in range(d):
                    z[k] = pts[p, k] - src[j, k]
                _grad(code, &par[0], z, g, d)
                for k in range(d):
                    out[p, k] += w[j] * g[k]
    return out_arr


def hess_pair(int code, double[::1] par, double[:, ::1] pts, double[:, ::1] up,
              double[:, ::1] src, double[::1] w, double[:, ::1] us):
    """Sum_j w_j D2K(p - x_j) (u_p - u_j) for every evaluation point p."""
    cdef Py_ssize_t P = pts.shape[0], N = src.shape[0], d = pts.shape[1]
    cdef Py_ssize_t p, j, k
    cdef double z[MAXD]
    cdef double dv[MAXD]
    cdef double hv[MAXD]
    _check(code, d)
    out_arr = np.zeros((P, d))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for p in range(P):
            for j in range(N):
                for k in range(d):
                    z[k] = pts[p, k] - src[j, k]
                    dv[k] = up[p, k] - us[j, k]
                _hess_apply(code, &par[0], z, dv, hv, d)
                for k in range(d):
                    out[p, k] += w[j] * hv[k]
    return out_arr


def pair_dissipation(int code, double[::1] par, double[:, ::1] x,
                     double[:, ::1] u, double[::1] m):
    """0.5 * sum_i sum_j m_i m_j (u_i - u_j)^T D2K(x_i - x_j) (u_i - u_j)."""
    cdef Py_ssize_t N = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double z[MAXD]
    cdef double dv[MAXD]
    cdef double hv[MAXD]
    cdef double total = 0.0, q
    _check(code, d)
    with nogil:
        for i in range(N):
            for j in range(N):
                for k in range(d):
                    z[k] = x[i, k] - x[j, k]
                    dv[k] = u[i, k] - u[j, k]
                _hess_apply(code, &par[0], z, dv, hv, d)
                q = 0.0
                for k in range(d):
                    q += dv[k] * hv[k]
                total += m[i] * m[j] * q
    return 0.5 * total


def circulant_conv(double[::1] kappa, double[::1] f, double dx):
    """out_i = sum_j kappa[(i - j) mod M] f_j dx."""
    cdef Py_ssize_t M = f.shape[0], i, j, idx
    cdef double acc
    out_arr = np.empty(M)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(M):
            acc = 0.0
            for j in range(M):
                idx = i - j
                if idx < 0:
                    idx += M
                acc += kappa[idx] * f[j]
            out[i] = acc * dx
    return out_arr


def circulant_dissipation(double[::1] kappa, double[::1] rho, double[::1] u, double dx):
    """0.5 * sum_i sum_j rho_i rho_j kappa[(i - j) mod M] (u_i - u_j)^2 dx^2."""
    cdef Py_ssize_t M = rho.shape[0], i, j, idx
    cdef double acc, total = 0.0, du
    with nogil:
        for i in range(M):
            acc = 0.0
            for j in range(M):
                idx = i - j
                if idx < 0:
                    idx += M
                du = u[i] - u[j]
                acc += kappa[idx] * rho[j] * du * du
            total += rho[i] * acc
    return 0.5 * total * dx * dx


def rusanov_fluxes(double[::1] rho, double[::1] u):
    """Interface fluxes at i+1/2 (periodic) for the pressureless system."""
    cdef Py_ssize_t M = rho.shape[0], i, r
    cdef double a, ul, ur, ql, qr
    fr_arr = np.empty(M)
    fm_arr = np.empty(M)
    cdef double[::1] fr = fr_arr
    cdef double[::1] fm = fm_arr
    with nogil:
        for i in range(M):
            r = i + 1
            if r == M:
                r = 0
            ul = u[i]
            ur = u[r]
            a = ul if ul >= 0 else -ul
            if ur > a:
                a = ur
            elif -ur > a:
                a = -ur
            ql = rho[i] * ul
            qr = rho[r] * ur
            fr[i] = 0.5 * (ql + qr) - 0.5 * a * (rho[r] - rho[i])
            fm[i] = 0.5 * (ql * ul + qr * ur) - 0.5 * a * (qr - ql)
    return fr_arr, fm_arr

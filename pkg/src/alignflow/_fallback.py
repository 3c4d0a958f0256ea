"""Pure numpy implementation of the compiled core (same signatures).

Reductions go through numpy's fixed-order ``add.reduce`` along the source axis,
so results are reproducible for a given input ordering.  They agree with the
compiled loops to rounding, not bitwise.
"""
import numpy as np

from . import _formulas


def _check(code):
    if code not in (1, 2, 3, 4):
        raise ValueError(f"no closed form for family code {code}")


def grad_conv(code, par, pts, src, w):
    _check(code)
    z = pts[:, None, :] - src[None, :, :]
    g = _formulas.gradient(code, par, z)
    return np.add.reduce(w[None, :, None] * g, axis=1)


def hess_pair(code, par, pts, up, src, w, us):
    _check(code)
    z = pts[:, None, :] - src[None, :, :]
    dv = up[:, None, :] - us[None, :, :]
    h = _formulas.hessian(code, par, z)
    hv = np.einsum("pjkl,pjl->pjk", h, dv)
    return np.add.reduce(w[None, :, None] * hv, axis=1)


def pair_dissipation(code, par, x, u, m):
    _check(code)
    z = x[:, None, :] - x[None, :, :]
    dv = u[:, None, :] - u[None, :, :]
    h = _formulas.hessian(code, par, z)
    q = np.einsum("ijk,ijkl,ijl->ij", dv, h, dv)
    return 0.5 * float(np.add.reduce(m * np.add.reduce(m[None, :] * q, axis=1)))


def _circulant(kappa):
    M = kappa.shape[0]
    idx = (np.arange(M)[:, None] - np.arange(M)[None, :]) % M
    return kappa[idx]


def circulant_conv(kappa, f, dx):
    return np.add.reduce(_circulant(kappa) * f[None, :], axis=1) * dx


def circulant_dissipation(kappa, rho, u, dx):
    du = u[:, None] - u[None, :]
    acc = np.add.reduce(_circulant(kappa) * rho[None, :] * du * du, axis=1)
    return 0.5 * float(np.add.reduce(rho * acc)) * dx * dx


def rusanov_fluxes(rho, u):
    rho_r = np.roll(rho, -1)
    u_r = np.roll(u, -1)
    a = np.maximum(np.abs(u), np.abs(u_r))
    ql = rho * u
    qr = rho_r * u_r
    fr = 0.5 * (ql + qr) - 0.5 * a * (rho_r - rho)
    fm = 0.5 * (ql * u + qr * u_r) - 0.5 * a * (qr - ql)
    return fr, fm

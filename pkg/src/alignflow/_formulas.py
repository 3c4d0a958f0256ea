"""Closed-form potentials shared by the kernel catalogue and the numpy backend.

Every function takes displacements ``z`` of shape ``(..., d)`` and a parameter
vector ``par``.  The compiled core re-implements the same formulas inline and
dispatches on the integer family codes below.
"""
import numpy as np

GENERIC = 0
QUADRATIC = 1
SMOOTHED_NORM = 2
GAUSSIAN_BUMP = 3
TILTED_QUADRATIC = 4


def potential(code, par, z):
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    if code == QUADRATIC:
        return 0.5 * par[0] * r2
    if code == SMOOTHED_NORM:
        return np.sqrt(par[0] ** 2 + r2)
    if code == GAUSSIAN_BUMP:
        return -np.exp(-r2 / (2.0 * par[0] ** 2))
    if code == TILTED_QUADRATIC:
        return 0.5 * r2 + par[0] * np.sum(z - np.sin(z), axis=-1)
    raise ValueError(f"no closed form for family code {code}")


def gradient(code, par, z):
    z = np.asarray(z, dtype=float)
    if code == QUADRATIC:
        return par[0] * z
    if code == SMOOTHED_NORM:
        s = np.sqrt(par[0] ** 2 + np.sum(z * z, axis=-1))
        return z / s[..., None]
    if code == GAUSSIAN_BUMP:
        s2 = par[0] ** 2
        e = np.exp(-np.sum(z * z, axis=-1) / (2.0 * s2))
        return z * (e / s2)[..., None]
    if code == TILTED_QUADRATIC:
        return z + par[0] * (1.0 - np.cos(z))
    raise ValueError(f"no closed form for family code {code}")


def hessian(code, par, z):
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    eye = np.eye(d)
    outer = z[..., :, None] * z[..., None, :]
    if code == QUADRATIC:
        return np.broadcast_to(par[0] * eye, z.shape[:-1] + (d, d)).copy()
    if code == SMOOTHED_NORM:
        s = np.sqrt(par[0] ** 2 + np.sum(z * z, axis=-1))[..., None, None]
        return eye / s - outer / s**3
    if code == GAUSSIAN_BUMP:
        s2 = par[0] ** 2
        e = np.exp(-np.sum(z * z, axis=-1) / (2.0 * s2))[..., None, None]
        return e * (eye / s2 - outer / s2**2)
    if code == TILTED_QUADRATIC:
        diag = 1.0 + par[0] * np.sin(z)
        return diag[..., :, None] * eye
    raise ValueError(f"no closed form for family code {code}")

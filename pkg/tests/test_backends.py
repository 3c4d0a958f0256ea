"""Compiled core vs numpy fallback: same results to rounding."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from alignflow import _fallback

core = pytest.importorskip("alignflow._core")

FAMILIES = [(1, [1.0]), (1, [0.0]), (2, [0.4]), (3, [0.7]), (4, [0.5])]


def _cloud(n, d, seed):
    rng = np.random.default_rng(seed)
    return (np.ascontiguousarray(rng.normal(size=(n, d))), np.ascontiguousarray(rng.normal(size=(n, d))),
            rng.random(n))


@pytest.mark.parametrize("code,par", FAMILIES)
@pytest.mark.parametrize("d", [1, 3])
def test_pairwise_kernels_agree(code, par, d):
    par = np.array(par)
    x, u, m = _cloud(30, d, seed=code * 10 + d)
    at, u_at, _ = _cloud(7, d, seed=99)
    np.testing.assert_allclose(core.grad_conv(code, par, at, x, m), _fallback.grad_conv(code, par, at, x, m),
                               rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(core.hess_pair(code, par, at, u_at, x, m, u),
                               _fallback.hess_pair(code, par, at, u_at, x, m, u), rtol=1e-13, atol=1e-14)
    assert core.pair_dissipation(code, par, x, u, m) == pytest.approx(
        _fallback.pair_dissipation(code, par, x, u, m), rel=1e-13, abs=1e-15)


def test_grid_kernels_agree():
    rng = np.random.default_rng(3)
    M = 64
    kappa = np.ascontiguousarray(rng.random(M))
    rho = np.ascontiguousarray(rng.random(M) + 0.1)
    u = np.ascontiguousarray(rng.normal(size=M))
    np.testing.assert_allclose(core.circulant_conv(kappa, rho, 0.1), _fallback.circulant_conv(kappa, rho, 0.1),
                               rtol=1e-13)
    assert core.circulant_dissipation(kappa, rho, u, 0.1) == pytest.approx(
        _fallback.circulant_dissipation(kappa, rho, u, 0.1), rel=1e-13)
    for a, b in zip(core.rusanov_fluxes(rho, u), _fallback.rusanov_fluxes(rho, u)):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_unknown_family_rejected():
    x, u, m = _cloud(3, 1, 0)
    for impl in (core, _fallback):
        with pytest.raises(ValueError):
            impl.grad_conv(0, np.array([1.0]), x, x, m)


def test_environment_forces_fallback():
    env = dict(os.environ, ALIGNFLOW_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import alignflow; print(alignflow.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_simulations_agree_across_backends():
    code = (
        "import numpy as np, json;"
        "from alignflow.kernels import make_builtin;"
        "from alignflow.particles import from_arrays, simulate;"
        "k = make_builtin('smoothed_norm', {'epsilon': 0.5}, 2);"
        "rng = np.random.default_rng(0);"
        "t = simulate(from_arrays(rng.normal(size=(12, 2)), rng.normal(size=(12, 2))), k, 0.5, 1e-3, record_every=500);"
        "print(json.dumps(t.positions[-1].ravel().tolist()))"
    )
    outs = []
    for pure in ("0", "1"):
        env = dict(os.environ, ALIGNFLOW_PURE=pure)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs.append(np.array(json.loads(res.stdout)))
    np.testing.assert_allclose(outs[0], outs[1], rtol=0, atol=1e-12)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alignflow.errors import ConfigError
from alignflow.kernels import (
    conv_grad,
    conv_hess_pair,
    from_spec,
    make_builtin,
    validate,
)
from alignflow.measures import AtomicMeasure, dirac


def test_quadratic_hessian_is_identity_in_2d():
    k = make_builtin("quadratic", [], 2)
    xs = np.array([[0.0, 0.0], [3.0, -1.5], [1e6, 2.0]])
    np.testing.assert_array_equal(k.eval_hessK(xs), np.broadcast_to(np.eye(2), (3, 2, 2)))


def test_smoothed_norm_hessian_values():
    k = make_builtin("smoothed_norm", {"epsilon": 1.0}, 1)
    assert k.hess_scalar(0.0) == pytest.approx(1.0, abs=1e-15)
    assert k.hess_scalar(1.0) == pytest.approx(2**-1.5, abs=1e-15)
    assert k.hess_scalar(1.0) == pytest.approx(0.353553, abs=1e-6)
    # central finite differences of the gradient at h = 1e-5
    h = 1e-5
    fd = (k.eval_gradK(np.array([[1.0 + h]])) - k.eval_gradK(np.array([[1.0 - h]])))[0, 0] / (2 * h)
    assert fd == pytest.approx(2**-1.5, abs=1e-9)


def test_gaussian_bump_sign_change():
    k = make_builtin("gaussian_bump", {"sigma": 1.0}, 1)
    assert k.hess_scalar(0.0) == pytest.approx(1.0, abs=1e-15)
    assert k.hess_scalar(2.0) == pytest.approx(-3.0 * np.exp(-2.0), abs=1e-15)
    assert k.hess_scalar(2.0) < 0
    assert not k.flags.psd


def test_tilted_quadratic_is_not_even():
    k = make_builtin("tilted_quadratic", {"tilt": 0.5}, 1)
    assert not k.flags.even
    assert k.hess_scalar(1.0) != pytest.approx(k.hess_scalar(-1.0))
    assert make_builtin("tilted_quadratic", {"tilt": 0.0}, 1).flags.even


@pytest.mark.parametrize("name,params,dim", [
    ("quadratic", {}, 1),
    ("quadratic", {}, 3),
    ("smoothed_norm", {"epsilon": 0.5}, 2),
    ("gaussian_bump", {"sigma": 0.7}, 1),
    ("gaussian_bump", {"sigma": 1.2}, 2),
    ("tilted_quadratic", {"tilt": 0.5}, 2),
])
def test_builtin_kernels_validate(name, params, dim):
    report = validate(make_builtin(name, params, dim))
    assert report.passed, report.to_dict()


def test_quadratic_validation_has_zero_violation():
    report = validate(make_builtin("quadratic", {}, 2), sample_box=(-100, 100))
    assert report.passed
    assert all(c.worst == 0.0 for c in report.checks if c.name != "finite_difference")


def test_forced_psd_flag_is_caught_with_witness():
    sigma = 1.0
    k = make_builtin("gaussian_bump", {"sigma": sigma}, 1).with_flags(psd=True)
    report = validate(k)
    psd = report["psd"]
    assert not psd.passed
    assert abs(psd.witness[0]) > sigma


def test_understated_sup_norm_is_caught():
    k = make_builtin("quadratic", {}, 1).with_bounds(hess_sup_norm=0.5)
    report = validate(k)
    assert not report["sup_norm"].passed
    assert report["sup_norm"].worst == pytest.approx(0.5)


def test_forced_even_flag_on_tilted_kernel_fails():
    k = make_builtin("tilted_quadratic", {"tilt": 0.5}, 1).with_flags(even=True)
    assert not validate(k)["even"].passed


def test_validate_is_deterministic_for_a_seed():
    k = make_builtin("gaussian_bump", {"sigma": 1.0}, 2).with_flags(psd=True)
    a = validate(k, seed=3).to_dict()
    b = validate(k, seed=3).to_dict()
    assert a == b


def test_conv_grad_examples():
    q2 = make_builtin("quadratic", {}, 2)
    np.testing.assert_allclose(conv_grad(q2, dirac([0.0, 0.0]), np.array([3.0, 4.0])), [3.0, 4.0])
    q1 = make_builtin("quadratic", {}, 1)
    mu = AtomicMeasure([[-1.0], [1.0]], [0.5, 0.5])
    np.testing.assert_allclose(conv_grad(q1, mu, np.array([0.0])), [0.0], atol=1e-15)
    sn = make_builtin("smoothed_norm", {"epsilon": 1.0}, 1)
    assert conv_grad(sn, dirac([0.0]), np.array([1.0]))[0] == pytest.approx(2**-0.5, abs=1e-15)


def test_conv_grad_is_order_independent():
    k = make_builtin("smoothed_norm", {"epsilon": 0.3}, 2)
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(40, 2))
    w = rng.random(40)
    x = np.array([0.1, -0.2])
    a = conv_grad(k, AtomicMeasure(pts, w), x)
    b = conv_grad(k, AtomicMeasure(pts[::-1], w[::-1]), x)
    assert np.array_equal(a, b)


def test_conv_hess_pair_examples(quadratic):
    mu = AtomicMeasure([[-1.0], [0.5], [2.0]], [0.2, 0.3, 0.5], canonical=False)
    vel = np.array([[1.0], [-2.0], [0.5]])
    # all velocities equal to u_x: no relaxation
    np.testing.assert_array_equal(
        conv_hess_pair(quadratic, mu, np.full((3, 1), 0.7), np.array([0.3]), np.array([0.7])), [0.0])
    # quadratic kernel: u_x - mean velocity
    ux = np.array([1.5])
    expected = ux - (0.2 * 1.0 + 0.3 * -2.0 + 0.5 * 0.5)
    np.testing.assert_allclose(conv_hess_pair(quadratic, mu, vel, np.array([0.3]), ux), expected, atol=1e-15)
    direct = sum(w * (ux - v) for w, v in zip(mu.weights, vel))
    np.testing.assert_allclose(conv_hess_pair(quadratic, mu, vel, np.array([0.3]), ux), direct, atol=1e-15)
    empty = AtomicMeasure(np.zeros((0, 1)), [])
    np.testing.assert_array_equal(
        conv_hess_pair(quadratic, empty, np.zeros((0, 1)), np.array([0.3]), ux), [0.0])


def test_custom_table_reproduces_smoothed_norm():
    eps = 0.8
    xs = np.linspace(-4, 4, 801)
    kpp = eps**2 / (eps**2 + xs**2) ** 1.5
    k = make_builtin("custom_table", {"x": xs.tolist(), "kpp": kpp.tolist()}, 1)
    ref = make_builtin("smoothed_norm", {"epsilon": eps}, 1)
    z = np.random.default_rng(1).uniform(-3.9, 3.9, (500, 1))
    assert np.max(np.abs(k.eval_hessK(z) - ref.eval_hessK(z))) < 1e-8
    # anchored at 0: K'(0) = 0, which matches x / sqrt(eps^2 + x^2)
    assert np.max(np.abs(k.eval_gradK(z) - ref.eval_gradK(z))) < 1e-8
    assert k.flags.even and k.flags.psd
    assert k.hess_sup_norm == pytest.approx(1 / eps, rel=1e-6)
    assert validate(k, sample_box=(-3.9, 3.9)).passed


def test_custom_table_is_flat_outside():
    xs = np.linspace(-1, 1, 9)
    k = make_builtin("custom_table", {"x": xs.tolist(), "kpp": np.ones(9).tolist()}, 1)
    assert k.eval_hessK(np.array([[3.0]]))[0, 0, 0] == 0.0
    g1 = k.eval_gradK(np.array([[1.0]]))[0, 0]
    assert k.eval_gradK(np.array([[5.0]]))[0, 0] == g1


@pytest.mark.parametrize("spec", [
    {"name": "nope"},
    {"name": "smoothed_norm", "params": {"epsilon": 0}},
    {"name": "custom_table", "params": {"x": [0, 1], "kpp": [1, 1]}},
    {"name": "custom_table", "params": {"x": [0, 1, 2, 3], "kpp": [1, 1, 1, 1]}, "dim": 2},
    {"name": "quadratic", "flags": {"odd": True}},
    {"params": {}},
])
def test_bad_specs_raise_config_error(spec):
    with pytest.raises(ConfigError):
        from_spec(spec)


def test_from_spec_flag_override_round_trip():
    k = from_spec({"name": "gaussian_bump", "params": {"sigma": 2.0}, "dim": 1, "flags": {"psd": True}})
    assert k.flags.psd
    assert from_spec(k.spec()).flags.psd is False


@given(st.floats(-50, 50), st.floats(0.1, 5))
def test_hessians_are_symmetric_and_even(x, eps):
    for name, params in (("smoothed_norm", {"epsilon": eps}), ("gaussian_bump", {"sigma": eps})):
        k = make_builtin(name, params, 2)
        z = np.array([[x, 0.5 * x]])
        H = k.eval_hessK(z)[0]
        np.testing.assert_allclose(H, H.T, atol=1e-14)
        np.testing.assert_allclose(k.eval_hessK(-z)[0], H, atol=1e-14)
        assert np.linalg.norm(H, 2) <= k.hess_sup_norm * (1 + 1e-12)

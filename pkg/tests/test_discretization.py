import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phbeam.discretization import (
    FieldSet,
    Grid,
    apply_RA,
    apply_RB,
    boundary_delta1,
    boundary_delta2,
    boundary_pairing,
    build_operators,
    discrete_energy,
    energy_gradient,
    quadrature,
    total_derivative_gradient,
    variational_derivative,
)
from phbeam.errors import ConfigError, DimensionError
from phbeam.model import MaterialParams, ModelSpec, ModelVariant

MAT = MaterialParams(14.97, 50.0, 2.1, 0.54)
LIN = ModelSpec(ModelVariant.LINEAR_VISCOUS, MAT)
NL = ModelSpec(ModelVariant.NONLINEAR_STRUCTURAL, MAT)


def ops_for(n, order=2, L=0.54):
    return build_operators(Grid(n, L), order)


def smooth(ops, seed):
    rng = np.random.default_rng(seed)
    z = ops.grid.z / ops.grid.L
    return sum(rng.standard_normal() * np.cos(k * np.pi * z + rng.uniform(0, 6)) / k for k in range(1, 6))


@pytest.mark.parametrize("order", [2, 4])
@pytest.mark.parametrize("n", [9, 51, 101, 201])
def test_sbp_identity(order, n):
    ops = ops_for(n, order)
    W = np.diag(ops.w)
    D1 = ops.D1.toarray()
    B = np.zeros((n, n))
    B[0, 0], B[-1, -1] = -1, 1
    assert np.max(np.abs(W @ D1 + D1.T @ W - B)) < 1e-12


@pytest.mark.parametrize("order", [2, 4])
def test_constants_and_linears(order):
    ops = ops_for(101, order)
    z = ops.grid.z
    assert np.max(np.abs(ops.D1 @ np.ones(101))) < 1e-12
    assert np.max(np.abs(ops.D1 @ z - 1)) < 1e-12
    assert quadrature(np.ones(101), ops) == pytest.approx(0.54, abs=1e-12)


def test_quadrature_on_unit_interval():
    ops = ops_for(101, 2, L=1.0)
    z = ops.grid.z
    assert quadrature(z, ops) == pytest.approx(0.5, abs=1e-12)
    h = ops.grid.h
    # trapezoidal rule error for z^2 is h^2 / 6
    assert quadrature(z**2, ops) - 1 / 3 == pytest.approx(h**2 / 6, rel=1e-9)


def test_d1_of_quadratic_order2():
    ops = ops_for(21, 2, L=1.0)
    z = ops.grid.z
    d = ops.D1 @ z**2
    assert np.allclose(d[1:-1], 2 * z[1:-1], atol=1e-12)
    h = ops.grid.h
    # one-sided boundary rows carry an O(h) error
    assert d[0] == pytest.approx(h, abs=1e-12)
    assert d[-1] == pytest.approx(2 - h, abs=1e-12)


def test_order4_exact_on_cubics_interior():
    ops = ops_for(41, 4, L=1.0)
    z = ops.grid.z
    d = ops.D1 @ z**3
    assert np.allclose(d[4:-4], 3 * z[4:-4] ** 2, atol=1e-11)
    assert np.allclose(ops.D1 @ z**2, 2 * z, atol=1e-11)


@pytest.mark.parametrize("order", [2, 4])
def test_interior_truncation_order(order):
    errs = []
    for n in (41, 81, 161):
        ops = ops_for(n, order, L=1.0)
        z = ops.grid.z
        err = np.abs(ops.D1 @ np.sin(3 * z) - 3 * np.cos(3 * z))
        errs.append(np.max(err[(z > 0.25) & (z < 0.75)]))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.allclose(ratios, 2**order, rtol=0.1)


@pytest.mark.parametrize("order", [2, 4])
def test_double_integration_by_parts(order):
    ops = ops_for(51, order)
    u, v = smooth(ops, 1), smooth(ops, 2)
    lhs = ops.w @ (u * (ops.D2 @ v)) - ops.w @ ((ops.D2 @ u) * v)
    b = u * (ops.D1 @ v) - (ops.D1 @ u) * v
    assert lhs == pytest.approx(b[-1] - b[0], abs=1e-10)


def test_dissipation_operator_decompositions():
    ops = ops_for(51, 2)
    eta, coeff = smooth(ops, 3), 1.3 + 0.2 * np.sin(ops.grid.z)
    d1 = ops.D1 @ eta
    lhs = ops.w @ (apply_RA(eta, coeff, ops) * eta)
    bt = coeff * d1 * eta
    assert lhs == pytest.approx(bt[-1] - bt[0] - ops.w @ (d1 * coeff * d1), abs=1e-10)
    d2 = ops.D2 @ eta
    lhs = ops.w @ (apply_RB(eta, coeff, ops) * eta)
    bt = (ops.D1 @ (coeff * d2)) * eta - coeff * d2 * d1
    assert lhs == pytest.approx(bt[-1] - bt[0] + ops.w @ (d2 * coeff * d2), abs=1e-10)
    assert ops.w @ (d2 * coeff * d2) >= 0
    assert np.allclose(apply_RA(np.full(51, 2.0), coeff, ops), 0)
    assert np.allclose(apply_RB(3 + ops.grid.z, 1.0, ops)[2:-2], 0, atol=1e-13 * ops.grid.h**-4)
    with pytest.raises(DimensionError):
        apply_RA(np.ones(50), 1.0, ops)


def test_build_operators_errors():
    with pytest.raises(ConfigError):
        build_operators(Grid(21, 1.0), 3)
    with pytest.raises(ConfigError):
        Grid(5, 1.0)
    with pytest.raises(ConfigError):
        Grid(21, -1.0)


def test_energy_of_straight_line():
    """``w1 = a z + b``: only the quartic stretching term survives, ``EA a^4 L / 8``."""
    ops = ops_for(41)
    z = ops.grid.z
    a = 0.3
    st_ = FieldSet(a * z + 0.01, np.zeros(41), np.zeros(41), np.zeros(41))
    assert discrete_energy(NL, st_, ops) == pytest.approx(50 * a**4 * 0.54 / 8, rel=1e-12)
    assert discrete_energy(LIN, st_, ops) == pytest.approx(0.0, abs=1e-20)


def test_variational_derivative_linear_fourth_derivative():
    errs = []
    for n in (81, 161, 321):
        ops = ops_for(n)
        z, L = ops.grid.z, ops.grid.L
        st_ = FieldSet(np.sin(np.pi * z / L), np.zeros(n), np.zeros(n), np.zeros(n))
        d = variational_derivative(LIN, st_, ops)
        exact = 14.97 * (np.pi / L) ** 4 * np.sin(np.pi * z / L)
        mask = (z > 0.25 * L) & (z < 0.75 * L)
        errs.append(np.max(np.abs(d.w1 - exact)[mask]))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios - 4) < 0.4)


def test_variational_derivative_momenta_and_zero_state():
    ops = ops_for(21)
    p = smooth(ops, 4)
    z0 = np.zeros(21)
    d = variational_derivative(NL, FieldSet(z0, z0, p, 2 * p), ops)
    assert np.array_equal(d.p1, p / 2.1)
    assert np.array_equal(d.p2, 2 * p / 2.1)
    assert not np.any(d.w1) and not np.any(d.w2)
    with pytest.raises(DimensionError):
        variational_derivative(NL, FieldSet(np.zeros(20), z0, z0, z0), ops)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4]))
def test_energy_gradient_matches_finite_differences(seed, order):
    ops = ops_for(21, order)
    st_ = FieldSet(*(0.1 * smooth(ops, seed + i) for i in range(4)))
    g = energy_gradient(NL, st_, ops)
    k = np.random.default_rng(seed).integers(21)
    eps = 1e-6
    for name in ("w1", "w2", "p1"):
        up = {f: getattr(st_, f).copy() for f in FieldSet._fields}
        dn = {f: getattr(st_, f).copy() for f in FieldSet._fields}
        up[name][k] += eps
        dn[name][k] -= eps
        fd = (discrete_energy(NL, FieldSet(**up), ops) - discrete_energy(NL, FieldSet(**dn), ops)) / (2 * eps)
        assert getattr(g, name)[k] == pytest.approx(fd, rel=1e-5, abs=1e-6)


@pytest.mark.parametrize("model", [LIN, NL])
def test_gradient_is_weighted_variation_plus_boundary(model):
    ops = ops_for(31)
    st_ = FieldSet(0.1 * smooth(ops, 5), 0.01 * smooth(ops, 6), smooth(ops, 7), smooth(ops, 8))
    v = FieldSet(smooth(ops, 9), smooth(ops, 10), 0, 0)
    g = energy_gradient(model, st_, ops)
    d = variational_derivative(model, st_, ops)
    lhs = g.w1 @ v.w1 + g.w2 @ v.w2
    rhs = ops.w @ (d.w1 * v.w1 + d.w2 * v.w2) + boundary_pairing(model, st_, v, ops)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_boundary_operators_hand_values():
    ops = ops_for(41)
    z = ops.grid.z
    zero = np.zeros(41)
    st_ = FieldSet(0.1 * z, 0.01 * z, zero, zero)
    assert boundary_delta1(NL, st_, ops, "right").w1 == pytest.approx(0.075, abs=1e-8)
    assert boundary_delta1(NL, st_, ops, "right").w2 == pytest.approx(0.75, rel=1e-12)
    assert boundary_delta1(NL, FieldSet(zero, zero, zero, zero), ops, "left") == (0.0, 0.0)

    w1 = smooth(ops, 11)
    st_ = FieldSet(w1, zero, zero, zero)
    expected = -14.97 * (ops.D1 @ (ops.D2 @ w1))
    assert boundary_delta1(LIN, st_, ops, "right").w1 == pytest.approx(expected[-1], rel=1e-12)
    assert boundary_delta1(LIN, st_, ops, "left").w1 == pytest.approx(expected[0], rel=1e-12)


def test_boundary_moment_on_order4_grid():
    # the order-4 closure differentiates quadratics exactly up to the boundary
    ops = ops_for(41, 4)
    z = ops.grid.z
    zero = np.zeros(41)
    st_ = FieldSet(0.1 * z**2, smooth(ops, 1), zero, zero)
    d2 = boundary_delta2(NL, st_, ops, "right")
    assert d2.w1 == pytest.approx(2.994, rel=1e-10)
    assert d2.w2 == 0.0


def test_total_derivative_gradient_lives_on_boundary():
    ops = ops_for(41)
    w = smooth(ops, 12)

    def F(w):
        f = w**3 + (ops.D1 @ w) ** 2
        return ops.w @ (ops.D1 @ f)

    g = total_derivative_gradient(3 * w**2, 2 * (ops.D1 @ w), ops)
    assert np.max(np.abs(g[4:-4])) < 1e-12
    eps = 1e-6
    for k in (0, 1, 39, 40):
        e = np.zeros(41)
        e[k] = eps
        assert g[k] == pytest.approx((F(w + e) - F(w - e)) / (2 * eps), rel=1e-6, abs=1e-8)
    # the functional collapses to boundary values
    f = w**3 + (ops.D1 @ w) ** 2
    assert F(w) == pytest.approx(f[-1] - f[0], abs=1e-10)

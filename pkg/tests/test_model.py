import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phbeam.errors import DomainError
from phbeam.model import (
    JetPoint,
    MaterialParams,
    ModelSpec,
    ModelVariant,
    corrected_boundary_forces,
    hamiltonian_density,
    hamiltonian_hessian,
    hamiltonian_partials,
    internal_forces,
)

FIG1 = dict(E_times_I=14.97, E_times_A=50.0, rho_times_A=2.1, L=0.54)
JET_NAMES = ("w1", "w2", "p1", "p2", "w1_1", "w2_1", "w1_11")


def make_model(variant, alpha1=0.0, alpha2=0.0):
    return ModelSpec(variant, MaterialParams(**FIG1, alpha1=alpha1, alpha2=alpha2))


def strain_form(model, q):
    """Energy density written through the von Karman strain ``w2_1 + (w1_1)^2 / 2``."""
    m = model.material
    kinetic = (q.p1**2 + q.p2**2) / (2 * m.rho_times_A)
    if model.variant.is_nonlinear:
        eps = q.w2_1 + 0.5 * q.w1_1**2
        axial = 0.5 * m.E_times_A * eps**2
    else:
        axial = 0.5 * m.E_times_A * q.w2_1**2
    return kinetic + axial + 0.5 * m.E_times_I * q.w1_11**2


finite = st.floats(-2.0, 2.0, allow_nan=False)
jets = st.builds(JetPoint, **{k: finite for k in JET_NAMES})


def test_zero_jet_has_zero_energy_and_partials():
    for v in ModelVariant:
        model = make_model(v)
        assert hamiltonian_density(model, JetPoint()) == 0.0
        d = hamiltonian_partials(model, JetPoint())
        assert all(getattr(d, f) == 0.0 for f in d.__dataclass_fields__)


def test_density_hand_values():
    nl = make_model(ModelVariant.NONLINEAR_STRUCTURAL)
    assert hamiltonian_density(nl, JetPoint(w1_1=0.1)) == pytest.approx(0.5 * 50 * 0.25e-4, rel=1e-14)
    lin = make_model(ModelVariant.LINEAR_VISCOUS)
    assert hamiltonian_density(lin, JetPoint(p1=2.1)) == pytest.approx(1.05, rel=1e-14)


def test_partial_hand_value():
    d = hamiltonian_partials(make_model(ModelVariant.NONLINEAR_UNDAMPED), JetPoint(w1_1=0.1, w2_1=0.01))
    assert d.dH_dw2_1 == pytest.approx(0.75, rel=1e-14)


@given(jets)
def test_density_matches_strain_form(q):
    for v in ModelVariant:
        model = make_model(v)
        assert hamiltonian_density(model, q) == pytest.approx(strain_form(model, q), rel=1e-12, abs=1e-12)


@given(jets)
def test_density_nonnegative(q):
    for v in ModelVariant:
        assert hamiltonian_density(make_model(v), q) >= -1e-12


@settings(max_examples=100)
@given(jets)
def test_partials_match_central_differences(q):
    pairs = {"p1": "dH_dp1", "p2": "dH_dp2", "w1_1": "dH_dw1_1", "w2_1": "dH_dw2_1", "w1_11": "dH_dw1_11",
             "w1": "dH_dw1", "w2": "dH_dw2"}
    for v in ModelVariant:
        model = make_model(v)
        d = hamiltonian_partials(model, q)
        for jet, name in pairs.items():
            x = getattr(q, jet)
            eps = 1e-6 * max(1.0, abs(x))
            hi = JetPoint(**{**{k: getattr(q, k) for k in JET_NAMES}, jet: x + eps})
            lo = JetPoint(**{**{k: getattr(q, k) for k in JET_NAMES}, jet: x - eps})
            fd = (hamiltonian_density(model, hi) - hamiltonian_density(model, lo)) / (2 * eps)
            scale = max(1.0, abs(fd), hamiltonian_density(model, q))
            assert abs(getattr(d, name) - fd) <= 1e-6 * scale


@given(jets)
def test_hessian_matches_differences_of_partials(q):
    model = make_model(ModelVariant.NONLINEAR_UNDAMPED)
    h = hamiltonian_hessian(model, q)
    eps = 1e-6
    base = {k: getattr(q, k) for k in JET_NAMES}

    def partials(**shift):
        return hamiltonian_partials(model, JetPoint(**{**base, **{k: base[k] + v for k, v in shift.items()}}))

    up, dn = partials(w1_1=eps), partials(w1_1=-eps)
    assert h.d11 == pytest.approx((up.dH_dw1_1 - dn.dH_dw1_1) / (2 * eps), rel=1e-6, abs=1e-6)
    assert h.d12 == pytest.approx((up.dH_dw2_1 - dn.dH_dw2_1) / (2 * eps), rel=1e-6, abs=1e-6)
    up, dn = partials(w2_1=eps), partials(w2_1=-eps)
    assert h.d22 == pytest.approx((up.dH_dw2_1 - dn.dH_dw2_1) / (2 * eps), rel=1e-6)
    up, dn = partials(w1_11=eps), partials(w1_11=-eps)
    assert h.d33 == pytest.approx((up.dH_dw1_11 - dn.dH_dw1_11) / (2 * eps), rel=1e-6)


def test_partials_broadcast_over_nodes():
    model = make_model(ModelVariant.NONLINEAR_STRUCTURAL)
    w1_1 = np.linspace(-0.1, 0.1, 7)
    d = hamiltonian_partials(model, JetPoint(w1_1=w1_1))
    assert d.dH_dw2.shape == (7,)
    assert np.allclose(d.dH_dw1_1, 25 * w1_1**3)


def test_non_finite_jet_rejected():
    with pytest.raises(DomainError):
        hamiltonian_density(make_model(ModelVariant.LINEAR_VISCOUS), JetPoint(w1_1=np.nan))
    with pytest.raises(DomainError):
        hamiltonian_partials(make_model(ModelVariant.LINEAR_VISCOUS), JetPoint(p1=np.inf))


def test_internal_force_hand_values():
    model = make_model(ModelVariant.NONLINEAR_STRUCTURAL)
    assert internal_forces(model, JetPoint(w1_11=0.2), 0.0).M == pytest.approx(2.994, rel=1e-14)
    f = internal_forces(model, JetPoint(w1_1=0.1, w2_1=0.01), 0.0)
    assert f.Q == pytest.approx(0.075, rel=1e-13)
    assert f.N == pytest.approx(0.75, rel=1e-13)
    assert internal_forces(model, JetPoint(), 0.3).Q == pytest.approx(-14.97 * 0.3)
    zero = internal_forces(model, JetPoint(), 0.0)
    assert (zero.Q, zero.N, zero.M) == (0.0, 0.0, 0.0)


def test_corrected_forces_hand_values():
    model = make_model(ModelVariant.NONLINEAR_STRUCTURAL, alpha1=0.3, alpha2=0.5)
    q = JetPoint(w1_1=0.1, w2_1=0.01, w1_11=0.2)
    f = corrected_boundary_forces(model, q, 0.0, dotw1_111=0.0, dotw2_1=0.2, dotw1_11=-0.1)
    assert f.N == pytest.approx(0.85, rel=1e-13)
    assert f.M == pytest.approx(2.964, rel=1e-13)
    assert f.variant_corrected
    g = corrected_boundary_forces(model, q, 0.0, dotw1_111=2.0, dotw2_1=0.0, dotw1_11=0.0)
    assert g.Q == pytest.approx(0.075 - 0.6, rel=1e-13)


@given(jets, finite, finite, finite, finite)
def test_corrected_equals_uncorrected_without_damping(q, w111, a, b, c):
    for v in ModelVariant:
        plain = internal_forces(make_model(v), q, w111)
        corr = corrected_boundary_forces(make_model(v), q, w111, a, b, c)
        assert (plain.Q, plain.N, plain.M) == (corr.Q, corr.N, corr.M)
    # viscous damping never enters the boundary forces
    visc = corrected_boundary_forces(make_model(ModelVariant.LINEAR_VISCOUS, 1.0, 1.0), q, w111, a, b, c)
    plain = internal_forces(make_model(ModelVariant.LINEAR_VISCOUS), q, w111)
    assert (plain.Q, plain.N, plain.M) == (visc.Q, visc.N, visc.M)


@pytest.mark.parametrize("field,value", [("E_times_I", 0.0), ("E_times_A", -1.0), ("rho_times_A", np.nan),
                                         ("L", np.inf), ("alpha1", -1e-3)])
def test_material_validation(field, value):
    kwargs = {**FIG1, field: value}
    with pytest.raises(DomainError):
        MaterialParams(**kwargs)


def test_variant_parse_and_damping_roles():
    assert ModelVariant.parse("NonlinearStructural") is ModelVariant.NONLINEAR_STRUCTURAL
    assert ModelVariant.parse("LINEAR_VISCOUS") is ModelVariant.LINEAR_VISCOUS
    with pytest.raises(ValueError):
        ModelVariant.parse("Timoshenko")
    assert make_model(ModelVariant.NONLINEAR_STRUCTURAL, 1, 2).structural_damping == (1, 2)
    assert make_model(ModelVariant.NONLINEAR_STRUCTURAL, 1, 2).viscous_damping == (0, 0)
    assert make_model(ModelVariant.LINEAR_VISCOUS, 1, 2).viscous_damping == (1, 2)
    assert make_model(ModelVariant.NONLINEAR_UNDAMPED, 1, 2).structural_damping == (0, 0)

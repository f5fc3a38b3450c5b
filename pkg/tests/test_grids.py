import numpy as np
import pytest

from driftlab import BallGrid, SobolevExponents, TorusGrid, sphere_area
from driftlab.fields import ScalarField, SymTensorField, VectorField, sym_size


def test_sphere_areas():
    assert sphere_area(3) == pytest.approx(4 * np.pi, rel=1e-14)
    assert sphere_area(4) == pytest.approx(2 * np.pi ** 2, rel=1e-14)
    assert sphere_area(5) == pytest.approx(8 * np.pi ** 2 / 3, rel=1e-14)


def test_exponents_exact_rationals():
    from fractions import Fraction
    e3, e4, e5 = (SobolevExponents(n) for n in (3, 4, 5))
    assert e3.q == 6 and e4.q == 4 and e5.q == Fraction(10, 3)
    assert e3.cn == Fraction(1, 8)
    assert e4.cn == Fraction(1, 6)
    assert e5.cn == Fraction(3, 16)
    assert e3.alpha == Fraction(2, 3)
    with pytest.raises(ValueError):
        SobolevExponents(6)


def test_torus_grid_validation():
    TorusGrid(3, 8)
    with pytest.raises(ValueError):
        TorusGrid(3, 7)  # odd
    with pytest.raises(ValueError):
        TorusGrid(3, 6)  # too small
    with pytest.raises(ValueError):
        TorusGrid(2, 16)  # dimension outside range
    with pytest.raises(ValueError):
        TorusGrid(6, 16)


def test_torus_integrate_constant():
    g = TorusGrid(3, 16, L=2.0)
    assert g.integrate(np.ones(g.shape)) == pytest.approx(8.0, rel=1e-14)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_ball_angular_weights_sum_to_sphere_area(n):
    g = BallGrid(n, R=1.0, nr=8)
    assert np.sum(g.angular_weights) == pytest.approx(sphere_area(n), rel=1e-12)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_ball_radial_nodes(n):
    g = BallGrid(n, R=2.0, nr=24)
    assert g.r[0] > 0
    assert np.all(np.diff(g.r) > 0)
    assert g.r[-1] <= 2.0
    # radial weights integrate r^{n-1}: total volume
    vol = sphere_area(n) / n * 2.0 ** n
    assert g.integrate(np.ones(g.shape)) == pytest.approx(vol, rel=1e-12)


def test_ball_surface_integral_unit_sphere():
    g = BallGrid(3, R=1.0, nr=8)
    ring = np.ones(g.n_angular)
    assert g.surface_integrate(ring, 0.5) == pytest.approx(np.pi, rel=1e-12)


def test_ball_omega_unit_norm():
    for n in (3, 4, 5):
        g = BallGrid(n, R=1.0, nr=4)
        nrm = np.linalg.norm(g.omega, axis=1)
        assert np.allclose(nrm, 1.0, atol=1e-14)


def test_scalar_field_shape_check():
    g = TorusGrid(3, 8)
    ScalarField(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((8, 8)))


def test_fields_immutable():
    g = TorusGrid(3, 8)
    f = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(AttributeError):
        f.values = np.ones(g.shape)
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0  # read-only buffer


def test_vector_field_component_count():
    g = TorusGrid(4, 8)
    VectorField(g, np.zeros((4,) + g.shape))
    with pytest.raises(ValueError):
        VectorField(g, np.zeros((3,) + g.shape))


def test_symtensor_storage_and_trace():
    g = TorusGrid(3, 8)
    assert sym_size(3) == 6
    vals = np.zeros((6,) + g.shape)
    vals[0] = 1.0   # T_00
    vals[3] = -1.0  # T_11
    t = SymTensorField(g, vals, trace_free=False)
    assert np.allclose(t.trace(), 0.0)
    assert np.allclose(t.entry(1, 0), t.entry(0, 1))
    # trace-free declaration accepts this one
    SymTensorField(g, vals, trace_free=True)
    vals2 = vals.copy()
    vals2[5] = 0.5  # T_22 breaks the trace
    with pytest.raises(ValueError):
        SymTensorField(g, vals2, trace_free=True)


def test_symtensor_frobenius_counts_off_diagonal_twice():
    g = TorusGrid(3, 8)
    vals = np.zeros((6,) + g.shape)
    vals[1] = 2.0  # T_01 = T_10 = 2
    t = SymTensorField(g, vals)
    assert np.allclose(t.frobenius_sq(), 8.0)

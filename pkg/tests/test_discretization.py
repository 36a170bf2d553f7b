import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from einops import rearrange
from hypothesis import given, settings
from hypothesis import strategies as st

from discretization import (
    NONLINEARITIES,
    GridDerivatives,
    SparseOperator,
    apply_d1,
    apply_d2,
    assemble_linear_operator,
    assemble_operators,
    evaluate_nonlinearity,
    first_order_factors,
    get_nonlinearity,
)
from model import CnlsCoefficients, ComplexState, ConfigurationError, DomainLayout, build_grid
from pml import PmlCoefficientFields, PmlParameters, build_coefficient_fields, build_profiles


def _observed_orders(apply, exact):
    errors = []
    for n in (20, 40, 80, 160):
        x = np.linspace(0, 2 * np.pi, n + 1)
        d = x[1] - x[0]
        approx = apply(np.sin(x + 0.3), d)
        errors.append(np.max(np.abs(approx - exact(x + 0.3))[4:-4]))
    return np.log2(np.array(errors[:-1]) / np.array(errors[1:]))


def test_second_derivative_is_fourth_order():
    orders = _observed_orders(apply_d2, lambda x: -np.sin(x))
    assert np.all((orders > 3.7) & (orders < 4.3))


def test_first_derivative_is_fourth_order():
    orders = _observed_orders(apply_d1, np.cos)
    assert np.all((orders > 3.7) & (orders < 4.3))


def test_stencils_use_zero_ghosts():
    u = np.ones(7)
    assert apply_d2(u, 1.0)[0] == pytest.approx((-30 + 16 - 1) / 12)
    assert apply_d1(u, 1.0)[0] == pytest.approx((8 - 1) / 12)
    assert apply_d1(u, 1.0)[3] == 0.0
    with pytest.raises(ConfigurationError):
        apply_d1(np.ones(4), 1.0)


def test_matrices_match_line_stencils(small_box, rng):
    _, grid = small_box
    d = GridDerivatives.build(grid)
    f = rng.standard_normal(grid.shape)
    flat = rearrange(f, "x y -> (x y)")
    np.testing.assert_allclose(
        rearrange(d.dxx @ flat, "(x y) -> x y", x=grid.nx), apply_d2(f, grid.dx, axis=0), atol=1e-12
    )
    np.testing.assert_allclose(
        rearrange(d.dy @ flat, "(x y) -> x y", x=grid.nx), apply_d1(f, grid.dy, axis=1), atol=1e-12
    )
    assert d.interior.sum() == (grid.nx - 2) * (grid.ny - 2)


def _zero_fields(layout, grid, coeffs):
    return build_coefficient_fields(build_profiles(layout, grid, PmlParameters()), coeffs)


def _gaussian(layout, grid):
    x, y = grid.coordinates(layout)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    f = np.exp(-((xx - 3.0) ** 2) - (yy - 3.0) ** 2 + 0.5j * xx).astype(np.complex128)
    f[0, :] = f[-1, :] = f[:, 0] = f[:, -1] = 0.0
    return f


def test_operator_without_layers_reduces_to_stencils(small_box, linear_coeffs):
    layout, grid = small_box
    fields = _zero_fields(layout, grid, linear_coeffs)
    op = assemble_linear_operator(linear_coeffs, fields, grid)
    f = _gaussian(layout, grid)
    direct = 0.75 * apply_d2(f, grid.dx, axis=0) + 1.25 * apply_d2(f, grid.dy, axis=1)
    got = op(f)
    inner = (slice(1, -1), slice(1, -1))
    diff = np.linalg.norm(got[inner] - direct[inner]) / np.linalg.norm(direct[inner])
    assert diff < 1e-13
    assert np.all(got[0, :] == 0) and np.all(got[:, -1] == 0)


def test_mixed_term_without_layers(small_box, mixed_coeffs):
    layout, grid = small_box
    fields = _zero_fields(layout, grid, mixed_coeffs)
    f = _gaussian(layout, grid)
    got = assemble_linear_operator(mixed_coeffs, fields, grid)(f)
    direct = (
        apply_d2(f, grid.dx, axis=0)
        + apply_d2(f, grid.dy, axis=1)
        + 0.5 * apply_d1(apply_d1(f, grid.dx, axis=0), grid.dy, axis=1)
    )
    inner = (slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(got[inner], direct[inner], rtol=1e-12, atol=1e-12 * np.abs(direct).max())


def test_constant_sigma_factors_commute(small_box, mixed_coeffs):
    _, grid = small_box
    phase = np.exp(1j * math.pi / 4)
    sx, sy = 2.0, 1.5
    cx = np.full(grid.nx, 1 / (1 + phase * sx))
    cy = np.full(grid.ny, 1 / (1 + phase * sy))
    fields = PmlCoefficientFields(
        phase,
        cx,
        cy,
        np.zeros(grid.nx),
        np.zeros(grid.ny),
        np.full((1, grid.nx), 0.25 * sx),
        np.full((1, grid.ny), 0.25 * sy),
        np.zeros((1, grid.nx)),
        np.zeros((1, grid.ny)),
    )
    px, py = first_order_factors(fields, grid, 0)
    commutator = px @ py - py @ px
    assert spla.norm(commutator) <= 1e-12 * spla.norm(px @ py)


def test_layers_change_only_layer_rows(small_box, pml_params, mixed_coeffs):
    layout, grid = small_box
    profile = build_profiles(layout, grid, pml_params, mixed_coeffs)
    with_layers = assemble_operators(mixed_coeffs, build_coefficient_fields(profile, mixed_coeffs), grid)[0]
    without = assemble_linear_operator(mixed_coeffs, _zero_fields(layout, grid, mixed_coeffs), grid)
    f = _gaussian(layout, grid)
    sx, sy = grid.physical_slices(layout)
    # rows of the physical domain at least two points from the interface see sigma = 0 only
    inner = (slice(sx.start + 2, sx.stop - 2), slice(sy.start + 2, sy.stop - 2))
    np.testing.assert_allclose(with_layers(f)[inner], without(f)[inner], atol=1e-12)
    assert np.abs(with_layers(f) - without(f)).max() > 1e-8
    assert with_layers.matrix.dtype == np.complex128


def _expanded_minus_composed(layout, d, coeffs):
    layout, grid = build_grid(layout, d)
    profile = build_profiles(layout, grid, PmlParameters(hx=2.0, hy=2.0))
    fields = build_coefficient_fields(profile, coeffs)
    derivatives = GridDerivatives.build(grid)
    px, py = first_order_factors(fields, grid, 0, derivatives)
    c = coeffs.component(0)
    composed = c.alpha_x * px @ px + c.alpha_y * py @ py + 0.5 * c.beta * (px @ py + py @ px)
    mask = sp.diags(derivatives.interior.astype(float))
    composed = SparseOperator((mask @ composed @ mask).tocsr(), grid)
    expanded = assemble_linear_operator(coeffs, fields, grid, 0, derivatives)

    x, y = grid.coordinates(layout)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    s = xx if layout.delta_x > 0 else yy
    f = np.exp(-((s - 7.0) ** 2) / 8 + 0.5j * xx + 0.7j * yy)
    return s, expanded(f), expanded(f) - composed(f)


@pytest.mark.parametrize("layout", [DomainLayout(1.0, 1.0, 12.0, 0.0), DomainLayout(1.0, 1.0, 0.0, 12.0)])
def test_squared_factors_agree_with_composition(layout, mixed_coeffs):
    s, _, coarse = _expanded_minus_composed(layout, 0.05, mixed_coeffs)
    _, applied, fine = _expanded_minus_composed(layout, 0.025, mixed_coeffs)
    # layer points whose composed stencil stays clear of the boundary rows
    pick = np.zeros(s.shape, dtype=bool)
    pick[5:-5, 5:-5] = True
    pick &= s > 1.0
    coarse_error = np.abs(coarse[pick]).max()
    fine_error = np.abs(fine[::2, ::2][pick]).max()
    assert fine_error < 1e-3 * np.abs(applied[::2, ::2][pick]).max()
    assert math.log2(coarse_error / fine_error) > 3.5


def test_cme2_reduction_for_equal_components(cme2_coeffs, rng):
    phi = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    out = evaluate_nonlinearity(np.stack([phi, phi]), cme2_coeffs)
    a = np.abs(phi) ** 2
    expected = 0.5 * (3 * a * phi + phi**2 * np.conj(phi) - 0.2 * a**2 * phi)
    np.testing.assert_allclose(out[0], expected, rtol=1e-12)
    np.testing.assert_allclose(out[0], out[1])
    real = np.abs(phi)
    np.testing.assert_allclose(
        evaluate_nonlinearity(np.stack([real, real]), cme2_coeffs)[0],
        0.5 * (4 * real**3 - 0.2 * real**5),
        rtol=1e-12,
    )


def test_nonlinearity_edge_cases(small_box):
    layout, grid = small_box
    linear = CnlsCoefficients((1.0, 1.0), (1.0, 1.0), (0.0, 0.0))
    state = ComplexState(layout, grid, np.ones((2,) + grid.shape))
    assert not evaluate_nonlinearity(state, linear).data.any()
    with pytest.raises(ConfigurationError):
        evaluate_nonlinearity(np.ones((1, 3, 3)), CnlsCoefficients((1.0,), (1.0,), (0.0,), 1.0, 0.0, "cme2"))
    with pytest.raises(ConfigurationError):
        get_nonlinearity(CnlsCoefficients((1.0,), (1.0,), (0.0,), nonlinearity="cubic"))
    assert set(NONLINEARITIES) == {"cme2", "scalar"}


def test_scalar_nonlinearity():
    coeffs = CnlsCoefficients((1.0,), (1.0,), (0.0,), gamma=2.0, eps_q=0.5)
    u = np.array([[[1.0 + 1.0j, 0.5]]])
    a = np.abs(u) ** 2
    np.testing.assert_allclose(evaluate_nonlinearity(u, coeffs), 2.0 * (a + 0.5 * a**2) * u)


@pytest.mark.parametrize("name", ["cme2", "scalar"])
def test_wirtinger_derivatives_match_differences(name, rng):
    n = 2
    coeffs = CnlsCoefficients((1.0,) * n, (1.0,) * n, (0.0,) * n, gamma=0.7, eps_q=-0.3, nonlinearity=name)
    evaluate = get_nonlinearity(coeffs)
    u = rng.standard_normal((n, 4)) + 1j * rng.standard_normal((n, 4))
    du, dc = evaluate.wirtinger(u, coeffs)
    base = evaluate(u, coeffs)
    h = 1e-7 * (0.6 + 0.8j)
    for k in range(n):
        shifted = u.copy()
        shifted[k] += h
        change = (evaluate(shifted, coeffs) - base)
        predicted = du[:, k] * h + dc[:, k] * np.conj(h)
        np.testing.assert_allclose(change, predicted, rtol=1e-5, atol=1e-12)


@pytest.mark.parametrize("name", ["cme2", "scalar"])
@settings(deadline=None)
@given(theta=st.floats(0.0, 2 * math.pi))
def test_nonlinearity_commutes_with_a_common_phase(name, theta):
    coeffs = CnlsCoefficients((1.0, 1.0), (1.0, 1.0), (0.0, 0.0), gamma=0.7, eps_q=-0.3, nonlinearity=name)
    u = np.random.default_rng(7).standard_normal((2, 4, 4)) * (1 + 0.5j)
    u[1] += 0.3j
    rotation = np.exp(1j * theta)
    np.testing.assert_allclose(
        evaluate_nonlinearity(rotation * u, coeffs),
        rotation * evaluate_nonlinearity(u, coeffs),
        rtol=1e-10,
        atol=1e-10,
    )

import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from model import (
    ComplexState,
    ConfigurationError,
    NumericalFailure,
    OutputConfig,
    ScenarioConfig,
    SolverOptions,
    l2_norm,
    restrict_to_physical,
)
from pml import PmlParameters
from timestepper import (
    ARK4_TABLEAU,
    LinearSolver,
    ark_step,
    integrate,
    order_condition_residuals,
    verify_order_conditions,
)


def test_tableau_satisfies_order_conditions():
    assert verify_order_conditions(ARK4_TABLEAU) < 1e-10
    residuals = order_condition_residuals(ARK4_TABLEAU)
    assert "b.AEAIc" in residuals and "b.AIAEc" in residuals
    assert ARK4_TABLEAU.stages == 6


def test_broken_tableau_is_rejected():
    b = ARK4_TABLEAU.b.copy()
    b[0] += 1e-6
    with pytest.raises(NumericalFailure):
        verify_order_conditions(dataclasses.replace(ARK4_TABLEAU, b=b))
    a = ARK4_TABLEAU.a_explicit.copy()
    a[2, 2] = 0.1
    with pytest.raises(NumericalFailure):
        verify_order_conditions(dataclasses.replace(ARK4_TABLEAU, a_explicit=a))


def _scalar_run(dt, t_end, lam=-1.0, g=0.0, u0=0.8 + 0.3j):
    operators = [sp.csr_matrix(np.array([[lam]], dtype=np.complex128))]
    solver = LinearSolver(operators, dt, ARK4_TABLEAU.gamma, SolverOptions(strategy="direct"))

    def nonlinearity(v):
        return 1j * g * np.abs(v) ** 2 * v

    u = np.array([[u0]], dtype=np.complex128)
    estimates = []
    for _ in range(int(round(t_end / dt))):
        out = ark_step(u, dt, operators, nonlinearity if g else None, ARK4_TABLEAU, solver)
        u = out.u
        estimates.append(out.error_estimate)
    exact = u0 * np.exp(1j * (lam + g * abs(u0) ** 2) * t_end)
    return abs(u[0, 0] - exact), max(estimates)


@pytest.mark.parametrize("g", [0.0, 1.5])
def test_scalar_problem_converges_with_fourth_order(g):
    errors = [_scalar_run(dt, 2.0, g=g)[0] for dt in (0.2, 0.1, 0.05)]
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all((orders > 3.5) & (orders < 4.6))


def test_error_estimate_decreases_with_dt():
    coarse = _scalar_run(0.2, 1.0, g=1.0)[1]
    fine = _scalar_run(0.1, 1.0, g=1.0)[1]
    assert 0 < fine < coarse


def test_solver_strategies_agree(rng):
    n = 50
    main = -2 * np.ones(n)
    off = np.ones(n - 1)
    lap = sp.diags([off, main, off], [-1, 0, 1], format="csr") * 100.0
    rhs = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    direct = LinearSolver([lap], 0.01, 0.25, SolverOptions(strategy="direct")).solve(0, rhs)
    krylov = LinearSolver([lap], 0.01, 0.25, SolverOptions(strategy="krylov", tol=1e-12)).solve(0, rhs)
    np.testing.assert_allclose(direct, krylov, rtol=1e-9)
    threaded = LinearSolver([lap, lap], 0.01, 0.25, SolverOptions(threads=2)).solve_all(np.stack([rhs, rhs]))
    np.testing.assert_allclose(threaded[1], direct)
    with pytest.raises(ConfigurationError):
        LinearSolver([lap], 0.01, 0.25, SolverOptions(strategy="cholesky"))


def test_step_rejects_solver_for_other_dt():
    operators = [sp.csr_matrix(np.array([[1.0 + 0j]]))]
    solver = LinearSolver(operators, 0.1, ARK4_TABLEAU.gamma)
    with pytest.raises(ConfigurationError):
        ark_step(np.ones((1, 1), complex), 0.2, operators, None, ARK4_TABLEAU, solver)


def _gaussian_state(layout, grid, n=1):
    x, y = grid.coordinates(layout)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    g = np.exp(-((xx - 3.0) ** 2) - (yy - 3.0) ** 2)
    return ComplexState(layout, grid, np.stack([g] * n))


def _config(small_box, coeffs, pml=None, dt=0.01, t_end=0.05, **outputs):
    layout, grid = small_box
    return ScenarioConfig(
        coeffs,
        layout,
        grid,
        pml or PmlParameters(),
        dt,
        t_end,
        outputs=OutputConfig(**outputs),
        solver=SolverOptions(strategy="direct"),
    )


def test_integrate_records_outputs(small_box, linear_coeffs):
    config = _config(small_box, linear_coeffs, t_end=0.1, snapshot_times=(0.0, 0.026), diagnostics_every=3)
    calls = []
    result = integrate(
        config, _gaussian_state(*small_box), callbacks=[lambda s, t, u: calls.append(s)], verbose=False
    )
    assert result.steps == 10
    assert calls == list(range(1, 11))
    assert set(result.snapshots) == {0.0, 0.026}
    assert result.snapshots[0.026].time == pytest.approx(0.03)
    assert [d.step for d in result.diagnostics] == [0, 3, 6, 9, 10]
    assert result.final_state.time == pytest.approx(0.1)


def test_norm_is_nearly_conserved_without_absorption(small_box, linear_coeffs):
    config = _config(small_box, linear_coeffs, t_end=0.2)
    initial = _gaussian_state(*small_box)
    result = integrate(config, initial, verbose=False)
    assert l2_norm(result.final_state) == pytest.approx(l2_norm(initial), rel=1e-4)


def test_layers_absorb(small_box, mixed_coeffs, pml_params):
    layout, grid = small_box
    initial = _gaussian_state(layout, grid)
    absorbed = integrate(
        _config(small_box, mixed_coeffs, pml=pml_params, dt=0.05, t_end=3.0), initial, verbose=False
    ).final_state
    reflected = integrate(_config(small_box, mixed_coeffs, dt=0.05, t_end=3.0), initial, verbose=False).final_state
    assert absorbed.is_finite()
    assert l2_norm(restrict_to_physical(absorbed)) < 0.8 * l2_norm(restrict_to_physical(reflected))


def test_nonlinear_components_stay_symmetric(small_box, cme2_coeffs):
    layout, grid = small_box
    symmetric = dataclasses.replace(cme2_coeffs, alpha_x=(1.0, 1.0), beta=(0.2, 0.2))
    config = _config(small_box, symmetric, t_end=0.05)
    result = integrate(config, _gaussian_state(layout, grid, n=2), verbose=False)
    np.testing.assert_allclose(result.final_state.data[0], result.final_state.data[1], atol=1e-13)


def test_non_finite_values_are_reported(small_box, linear_coeffs):
    layout, grid = small_box
    initial = _gaussian_state(layout, grid)
    initial.data[0, grid.nx // 2, grid.ny // 2] = np.nan
    with pytest.raises(NumericalFailure) as info:
        integrate(_config(small_box, linear_coeffs), initial, verbose=False)
    assert info.value.time == pytest.approx(0.01)


def test_initial_state_must_match(small_box, linear_coeffs):
    layout, grid = small_box
    with pytest.raises(ConfigurationError):
        integrate(_config(small_box, linear_coeffs), _gaussian_state(layout, grid, n=2), verbose=False)


def test_temporal_order_on_a_fixed_grid(small_box, linear_coeffs):
    layout, grid = small_box
    initial = _gaussian_state(layout, grid)

    def run(dt):
        return integrate(_config(small_box, linear_coeffs, dt=dt, t_end=0.4), initial, verbose=False).final_state

    reference = run(0.0025)
    errors = [l2_norm(run(dt).data - reference.data, grid.dx, grid.dy) for dt in (0.04, 0.02, 0.01)]
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all((orders > 3.4) & (orders < 4.6))

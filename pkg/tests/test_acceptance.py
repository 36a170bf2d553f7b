"""Desk-scale runs of the built-in scenarios; enable with --runslow."""

import os
from dataclasses import replace

import numpy as np
import pytest

from experiments.sampling_and_metrics import relative_error
from experiments.scenarios import apply_scale, build_initial_state, load_scenario
from experiments.script import layer_width_sweep, run_scenario
from model import OutputConfig, ScenarioConfig, restrict_to_physical
from pml import PmlParameters
from reference import ground_state_for, shoot_radial_ground_state
from timestepper import integrate

pytestmark = pytest.mark.slow

THREADS = max(1, min(4, os.cpu_count() or 1))


def _at(history, t):
    """Entry of a (t, omega, layers) history nearest to t."""
    return min(history, key=lambda row: abs(row[0] - t))


def _monotone(errors):
    return bool(np.all(np.diff(errors) < 0))


@pytest.mark.parametrize("name, min_rate", [("lin-beta0", 0.8), ("lin-beta05", 0.5)])
def test_linear_sweeps(name, min_rate, tmp_path):
    scenario = apply_scale(load_scenario(name), "desk")
    (result,) = layer_width_sweep(scenario, out_dir=str(tmp_path), threads=THREADS, verbose=False)
    assert _monotone(result.errors)
    assert result.fit.p > min_rate


def test_unstable_layers_grow_while_stable_layers_decay(tmp_path):
    unstable = apply_scale(load_scenario("lin-beta05-unstable"), "desk")
    summary = run_scenario(unstable, str(tmp_path / "unstable"), verbose=False)
    assert not summary.stable_layers
    assert _at(summary.max_abs, 0.6)[2] >= 5 * _at(summary.max_abs, 0.4)[2]

    stable = replace(unstable, name="lin-beta05", pml=PmlParameters(hx=3.3, hy=3.3))
    summary = run_scenario(stable, str(tmp_path / "stable"), verbose=False)
    assert summary.stable_layers
    assert _at(summary.max_abs, 0.6)[1] < _at(summary.max_abs, 0.0)[1]
    assert _at(summary.max_abs, 0.6)[2] < 5 * _at(summary.max_abs, 0.4)[2]


def test_temporal_order_at_desk_scale():
    scenario = apply_scale(load_scenario("lin-beta0"), "desk")
    scenario = replace(scenario, t_end=0.4, outputs=OutputConfig())
    config = scenario.to_config()
    initial = build_initial_state(scenario, config, verbose=False)

    def run(dt):
        return restrict_to_physical(integrate(replace(config, dt=dt), initial, verbose=False).final_state)

    reference = run(0.0025)
    errors = [relative_error(run(dt), reference) for dt in (0.04, 0.02, 0.01)]
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all((orders > 3.5) & (orders < 4.5))


@pytest.mark.parametrize("name", ["nl-beta0", "nl-mixed"])
def test_nonlinear_sweeps(name, tmp_path):
    scenario = apply_scale(load_scenario(name), "desk")
    (result,) = layer_width_sweep(scenario, out_dir=str(tmp_path), threads=THREADS, verbose=False)
    assert _monotone(result.errors)
    assert result.correlation < -0.97


def test_pulse_passes_through_the_layers(tmp_path):
    scenario = apply_scale(load_scenario("nl-pulse"), "desk")
    summary = run_scenario(scenario, str(tmp_path / "run"), verbose=False)
    # group velocity 2 alpha k puts the pulse at the interface shortly before t = 0.4
    initial = _at(summary.max_abs, 0.0)[1]
    assert 0.9 <= _at(summary.max_abs, 0.2)[1] / initial <= 1.1
    assert _at(summary.max_abs, 3.0)[1] < 1e-3

    results = layer_width_sweep(scenario, out_dir=str(tmp_path / "sweep"), threads=THREADS, verbose=False)
    assert [r.time for r in results] == [0.5, 3.0]
    assert all(r.fit.p > 0 for r in results)


def test_radial_ground_state_against_tighter_tolerance():
    default = shoot_radial_ground_state(1.0)
    tight = shoot_radial_ground_state(1.0, tol=1e-15, eps=1e-10, n_points=8001)
    assert default.amplitude == pytest.approx(tight.amplitude, rel=1e-6)
    assert default.power == pytest.approx(tight.power, rel=1e-6)


def test_continued_ground_state_is_stationary():
    scenario = apply_scale(load_scenario("nl-mixed"), "desk")
    layout, grid = scenario.physical_grid()
    gs = ground_state_for(scenario.coefficients, layout, grid, verbose=False)
    assert gs.residual < 1e-10
    config = ScenarioConfig(gs.coefficients, gs.layout, gs.grid, PmlParameters(), 0.01, 1.0)
    result = integrate(config, gs.as_state(), verbose=False)
    expected = gs.as_state().with_data(gs.profile * gs.time_factor(1.0))
    assert relative_error(result.final_state, expected) < 1e-3


def test_long_time_run_does_not_grow(tmp_path):
    scenario = apply_scale(load_scenario("nl-mixed-longtime"), "desk")
    summary = run_scenario(scenario, str(tmp_path), verbose=False)
    history = np.array(summary.max_abs)
    peak = np.maximum(history[:, 1], history[:, 2])
    early = peak[history[:, 0] <= 5.0].max()
    assert peak.max() <= 1.05 * early
    assert history[-1, 0] == pytest.approx(50.0)

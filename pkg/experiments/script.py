import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm.auto import tqdm

from analysis import (
    NotRemovable,
    find_removal_transform,
    modal_point,
    opposite_velocity_interval,
    system_threshold,
    threshold_sigma1,
    threshold_table,
)
from model import (
    CnlsCoefficients,
    ComplexState,
    ConfigurationError,
    GaussianInitial,
    NumericalFailure,
    restrict_to_physical,
)
from pml import build_profiles, stability_report
from reference import GroundState, SpectralSolution
from timestepper import integrate

from experiments.sampling_and_metrics import (
    SweepResult,
    fit_rate,
    max_abs_in_layers,
    max_abs_in_omega,
    read_errors_csv,
    relative_error,
    write_diagnostics_csv,
    write_errors_csv,
    write_profile_csv,
)
from experiments.scenarios import (
    Scenario,
    apply_scale,
    build_initial_state,
    gaussian_function,
    load_scenario,
    resolve_ground_state,
)
from experiments.snapshots import save_ground_state, write_snapshot

EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_NUMERICAL = 3


@dataclass
class RunSummary:
    name: str
    out_dir: str
    steps: int
    t_end: float
    stable_layers: bool
    threshold: float
    max_abs: List[Tuple[float, float, float]] = field(default_factory=list)  # (t, omega, layers)
    errors: Dict[float, float] = field(default_factory=dict)


def _time_label(t: float) -> str:
    return f"{t:.4f}".rstrip("0").rstrip(".")


def spectral_reference(
    scenario: Scenario, times: Sequence[float], box_factor: float = 4.0
) -> Dict[float, ComplexState]:
    """Linear free-space solution on the physical domain at each time."""
    if scenario.coefficients.gamma != 0:
        raise ConfigurationError("the spectral reference requires gamma = 0")
    if not isinstance(scenario.initial, GaussianInitial):
        raise ConfigurationError("the spectral reference requires Gaussian initial data")
    box = SpectralSolution(scenario.layout.physical, scenario.dx, scenario.dy, box_factor)
    initial = box.sample(
        gaussian_function(scenario.initial, scenario.layout, scenario.coefficients.n_components)
    )
    return {t: box.restrict(box.evolve(initial, scenario.coefficients, t), t) for t in times}


def run_scenario(
    scenario: Scenario,
    out_dir: str,
    ground_state: Optional[GroundState] = None,
    reference: Optional[Dict[float, ComplexState]] = None,
    verbose: bool = True,
) -> RunSummary:
    """Integrate one scenario and write its outputs to `out_dir`.

    Writes a snapshot per requested time, `diagnostics.csv` and
    `summary.json` (max |u| history on the physical domain and in the layers,
    relative errors at the error times when a reference is available).
    """
    os.makedirs(out_dir, exist_ok=True)
    outputs = scenario.outputs
    times = tuple(sorted(set(outputs.snapshot_times) | set(outputs.error_times)))
    scenario = replace(scenario, outputs=replace(outputs, snapshot_times=times))
    config = scenario.to_config()
    report = stability_report(config.layout, config.pml, config.coefficients)
    if verbose:
        print(
            f"Scenario {scenario.name}: {config.grid.nx}x{config.grid.ny} points, "
            f"{config.n_steps} steps, max sigma {max(report.max_sigma_x, report.max_sigma_y):.4g}, "
            f"threshold {report.threshold:.4g}."
        )

    initial = build_initial_state(scenario, config, ground_state, cache_dir=out_dir, verbose=verbose)
    summary = RunSummary(scenario.name, out_dir, 0, config.t_end, report.stable, report.threshold)

    def track(step: int, t: float, state: ComplexState) -> None:
        if step % max(1, outputs.diagnostics_every) == 0 or step == config.n_steps:
            summary.max_abs.append((t, max_abs_in_omega(state), max_abs_in_layers(state)))

    track(0, 0.0, initial)
    result = integrate(config, initial, callbacks=[track], verbose=verbose)
    summary.steps = result.steps

    for t, state in sorted(result.snapshots.items()):
        write_snapshot(
            os.path.join(out_dir, "snapshots", f"t={_time_label(t)}.snap"),
            state,
            config.coefficients,
            extra={"scenario": scenario.name},
        )
    write_diagnostics_csv(os.path.join(out_dir, "diagnostics.csv"), result.diagnostics)

    linear_gaussian = config.coefficients.gamma == 0 and isinstance(scenario.initial, GaussianInitial)
    if reference is None and linear_gaussian and outputs.error_times:
        box_factor = scenario.sweep.box_factor if scenario.sweep else 4.0
        reference = spectral_reference(scenario, outputs.error_times, box_factor)
    if reference is not None:
        for t in outputs.error_times:
            summary.errors[t] = relative_error(result.snapshots[t], reference[t])
            if verbose:
                print(f"e_r(t={t:g}) = {summary.errors[t]:.4e}")

    with open(os.path.join(out_dir, "summary.json"), mode="w") as f:
        json.dump(
            {
                "name": summary.name,
                "steps": summary.steps,
                "t_end": summary.t_end,
                "stable_layers": summary.stable_layers,
                "threshold": summary.threshold if math.isfinite(summary.threshold) else None,
                "max_abs": summary.max_abs,
                "errors": {_time_label(t): e for t, e in summary.errors.items()},
            },
            f,
            indent=2,
        )
    return summary


def _run_width(
    scenario: Scenario, fraction: float, ground_state: Optional[GroundState]
) -> Tuple[float, Dict[float, ComplexState]]:
    """Physical-domain fields at the error times for one layer width."""
    member = scenario.with_layer_fraction(fraction)
    member = replace(
        member,
        outputs=replace(member.outputs, snapshot_times=member.outputs.error_times),
    )
    config = member.to_config()
    initial = build_initial_state(member, config, ground_state, verbose=False)
    result = integrate(config, initial, verbose=False)
    return config.layout.delta_x, {t: restrict_to_physical(s) for t, s in result.snapshots.items()}


def layer_width_sweep(
    scenario: Scenario,
    fractions: Optional[Sequence[float]] = None,
    policy: Optional[str] = None,
    out_dir: Optional[str] = None,
    threads: int = 1,
    verbose: bool = True,
) -> List[SweepResult]:
    """Relative errors over a range of layer widths, one result per error time.

    Parameters
    ----------
    scenario : Scenario
        Base scenario; its layer widths are replaced by `fraction * (Lx, Ly)`.
    fractions : Sequence[float], optional
        Layer widths as fractions of the domain, from the sweep section by default.
    policy : str, optional
        "spectral" (linear problems with Gaussian data) or "widest-layer",
        where the run with the widest layers is the reference and is left
        out of the fit.
    out_dir : str, optional
        Receives `errors.csv`, and the ground state for nonlinear scenarios.
    threads : int, default=1
        Number of worker processes.
    verbose : bool, default=True
        Print progress.

    Returns
    -------
    List[SweepResult]
    """
    sweep = scenario.sweep
    fractions = tuple(sorted(fractions if fractions is not None else (sweep.delta_fractions if sweep else ())))
    policy = policy or (sweep.reference if sweep else "widest-layer")
    if not fractions:
        raise ConfigurationError("no layer widths to sweep")
    if policy not in ("spectral", "widest-layer"):
        raise ConfigurationError(f"unknown reference policy {policy!r}")
    if policy == "spectral" and scenario.coefficients.gamma != 0:
        raise ConfigurationError("the spectral reference policy is for linear problems (gamma = 0)")
    if policy == "widest-layer" and len(fractions) < 2:
        raise ConfigurationError("the widest-layer policy needs at least two widths")
    times = scenario.outputs.error_times
    if not times:
        raise ConfigurationError("the scenario declares no error times")

    ground_state = None
    if not isinstance(scenario.initial, GaussianInitial) and hasattr(scenario.initial, "ground_state"):
        ground_state = resolve_ground_state(scenario, scenario.initial.ground_state, out_dir, verbose)

    members: List[Tuple[float, Dict[float, ComplexState]]] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_width, scenario, f, ground_state) for f in fractions]
            for future in tqdm(futures, desc="layer widths", disable=not verbose):
                members.append(future.result())
    else:
        for f in tqdm(fractions, desc="layer widths", disable=not verbose):
            members.append(_run_width(scenario, f, ground_state))

    if policy == "spectral":
        box_factor = sweep.box_factor if sweep else 4.0
        reference = spectral_reference(scenario, times, box_factor)
        compared, excluded = members, []
    else:
        reference = members[-1][1]
        compared, excluded = members[:-1], [members[-1][0]]

    results = []
    for t in times:
        deltas = [delta for delta, _ in compared]
        errors = [relative_error(fields[t], reference[t]) for _, fields in compared]
        result = SweepResult(deltas, errors, t, excluded=excluded)
        results.append(result)
        if verbose:
            for d, e in zip(deltas, errors):
                tqdm.write(f"t={t:g} delta={d:.4f} e_r={e:.4e}")
            if result.fit is not None:
                print(f"t={t:g}: e_r ~ {result.fit.c:.3g} * 10^(-{result.fit.p:.3f} delta)")

    if out_dir is not None:
        write_errors_csv(os.path.join(out_dir, "errors.csv"), results)
    return results


def _coefficients_from(args: argparse.Namespace) -> CnlsCoefficients:
    return load_scenario(args.config).coefficients


def cmd_threshold(args: argparse.Namespace) -> None:
    if args.tilde_beta is not None:
        print(f"sigma1({args.tilde_beta}) = {threshold_sigma1(args.tilde_beta):.10f}")
        return
    table = threshold_table(np.linspace(args.start, args.stop, args.num))
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        np.savetxt(args.out, table, delimiter=",", header="tilde_beta,sigma1", comments="", fmt="%.17g")
    else:
        print("tilde_beta,sigma1")
        for b, s in table:
            print(f"{b:.6g},{s:.10g}")


def cmd_analyze(args: argparse.Namespace) -> None:
    coeffs = _coefficients_from(args)
    print(f"system threshold sigma1 = {system_threshold(coeffs):.10g}")
    for j in range(coeffs.n_components):
        c = coeffs.component(j)
        point = modal_point(c, args.s, args.ky)
        lo, hi = opposite_velocity_interval(c, args.ky)
        print(
            f"component {j + 1}: tilde_beta={c.tilde_beta:.6g} sigma1={threshold_sigma1(c.tilde_beta):.6g} "
            f"lambda1={point.lambda1:.6g} lambda2={point.lambda2:.6g} "
            f"opposite velocities for kx in ({lo:.6g}, {hi:.6g})"
        )
    transform = find_removal_transform(coeffs)
    if isinstance(transform, NotRemovable):
        print(f"mixed derivatives cannot be removed: {transform.reason}")
    else:
        print(
            f"mixed derivatives removed by a={transform.a:.10g}, b={transform.b:.10g}, "
            f"theta={transform.theta:.10g}: alpha_x={transform.alpha_x}, alpha_y={transform.alpha_y}"
        )


def cmd_profile(args: argparse.Namespace) -> None:
    scenario = apply_scale(load_scenario(args.config), args.scale)
    config = scenario.to_config()
    profile = build_profiles(config.layout, config.grid, config.pml, config.coefficients)
    os.makedirs(args.out, exist_ok=True)
    write_profile_csv(os.path.join(args.out, "sigma_x.csv"), profile.x, profile.sigma_x)
    write_profile_csv(os.path.join(args.out, "sigma_y.csv"), profile.y, profile.sigma_y)
    print(f"Profiles written to {args.out}.")


def cmd_run(args: argparse.Namespace) -> None:
    scenario = apply_scale(load_scenario(args.config), args.scale)
    if args.threads:
        scenario = replace(scenario, solver=replace(scenario.solver, threads=args.threads))
    run_scenario(scenario, args.out)
    print(f"Outputs written to {args.out}.")


def cmd_sweep(args: argparse.Namespace) -> None:
    scenario = apply_scale(load_scenario(args.config), args.scale)
    layer_width_sweep(scenario, policy=args.reference, out_dir=args.out, threads=args.threads or 1)
    print(f"Errors written to {os.path.join(args.out, 'errors.csv')}.")


def cmd_fit(args: argparse.Namespace) -> None:
    rows = read_errors_csv(args.errors)
    for t in sorted({row[2] for row in rows}):
        fit = fit_rate((d, e) for d, e, tt in rows if tt == t and e > 0)
        print(f"t={t:g}: c={fit.c:.6g} p={fit.p:.6g}")


def cmd_groundstate(args: argparse.Namespace) -> None:
    scenario = apply_scale(load_scenario(args.config), args.scale)
    source = getattr(scenario.initial, "ground_state", None)
    if source is None:
        raise ConfigurationError(f"scenario {scenario.name} has no ground-state initial data")
    source = replace(source, path=None)
    ground_state = resolve_ground_state(scenario, source)
    path = os.path.join(args.out, "ground_state.snap")
    save_ground_state(path, ground_state)
    print(f"Ground state written to {path}.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Layered CNLS solver with mixed derivatives")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("threshold", help="stability threshold sigma1(tilde_beta)")
    p.add_argument("--tilde-beta", type=float, default=None)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--stop", type=float, default=0.95)
    p.add_argument("--num", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("analyze", help="modal roots, thresholds and mixed-derivative removal")
    p.add_argument("--config", required=True)
    p.add_argument("--s", type=complex, default=1.0)
    p.add_argument("--ky", type=float, default=1.0)
    p.set_defaults(func=cmd_analyze)

    for name, func, help_text in (
        ("profile", cmd_profile, "absorption profiles as CSV"),
        ("run", cmd_run, "integrate a scenario"),
        ("sweep", cmd_sweep, "layer-width convergence sweep"),
        ("groundstate", cmd_groundstate, "ground state by shooting and continuation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="built-in scenario name or config path")
        p.add_argument("--out", required=True)
        p.add_argument("--scale", default=None, help="'desk' or a factor in (0, 1]")
        p.add_argument("--threads", type=int, default=None)
        if name == "sweep":
            p.add_argument("--reference", choices=("spectral", "widest-layer"), default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("fit", help="rate fit of an errors CSV")
    p.add_argument("errors")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIGURATION
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from model import (
    CnlsCoefficients,
    ComplexState,
    ConfigurationError,
    DomainLayout,
    FileInitial,
    GaussianInitial,
    GridSpec,
    GroundStateSource,
    InitialCondition,
    KickedSoliton,
    OutputConfig,
    ScenarioConfig,
    SolitonPlusGaussians,
    SolverOptions,
    build_grid,
    embed_physical,
)
from pml import PmlParameters
from reference import GroundState, ground_state_for

from experiments.snapshots import load_ground_state, read_snapshot, save_ground_state

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")

BUILTIN_SCENARIOS = (
    "lin-beta0",
    "lin-beta05",
    "lin-beta05-unstable",
    "nl-beta0",
    "nl-mixed",
    "nl-pulse",
    "nl-mixed-longtime",
)

INITIAL_KINDS = {
    "gaussian": GaussianInitial,
    "soliton_plus_gaussians": SolitonPlusGaussians,
    "kicked_soliton": KickedSoliton,
    "file": FileInitial,
}


@dataclass
class SweepConfig:
    delta_fractions: Tuple[float, ...] = (0.08, 0.12, 0.16, 0.2, 0.25, 0.3)  # of Lx and Ly
    reference: str = "spectral"  # "spectral" (linear only) or "widest-layer"
    box_factor: float = 4.0  # spectral box size per side over the physical extent

    def __post_init__(self) -> None:
        if not self.delta_fractions:
            raise ConfigurationError("a sweep needs at least one layer width")
        if self.reference not in ("spectral", "widest-layer"):
            raise ConfigurationError(f"unknown reference policy {self.reference!r}")


@dataclass
class DeskScale:
    cells_x: int = 180  # cells across the physical domain
    cells_y: int = 180
    t_end: Optional[float] = None  # replaces t_end when set


@dataclass
class Scenario:
    """One entry of the scenario catalog, as stored in `configs/<name>/config.json`.

    The grid is given by the number of cells across the physical domain; the
    layers add whole cells on each side.
    """

    name: str
    coefficients: CnlsCoefficients
    layout: DomainLayout
    cells: Tuple[int, int]
    pml: PmlParameters
    dt: float
    t_end: float
    initial: InitialCondition = field(default_factory=GaussianInitial)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    sweep: Optional[SweepConfig] = None
    desk: DeskScale = field(default_factory=DeskScale)

    def __post_init__(self) -> None:
        if min(self.cells) < 8:
            raise ConfigurationError(f"at least 8 cells per side are required, got {self.cells}")

    @property
    def dx(self) -> float:
        return self.layout.Lx / self.cells[0]

    @property
    def dy(self) -> float:
        return self.layout.Ly / self.cells[1]

    def with_layer_fraction(self, fraction: float) -> "Scenario":
        layout = replace(
            self.layout, delta_x=fraction * self.layout.Lx, delta_y=fraction * self.layout.Ly
        )
        return replace(self, layout=layout)

    def physical_grid(self) -> Tuple[DomainLayout, GridSpec]:
        return build_grid(self.layout.physical, self.dx, self.dy)

    def to_config(self) -> ScenarioConfig:
        layout, grid = build_grid(self.layout, self.dx, self.dy)
        return ScenarioConfig(
            self.coefficients,
            layout,
            grid,
            self.pml,
            self.dt,
            self.t_end,
            self.initial,
            self.outputs,
            self.solver,
            self.name,
        )


def _tuples(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    return value


def _initial_from_dict(section: Dict[str, Any]) -> InitialCondition:
    section = dict(section)
    kind = section.get("kind", "gaussian")
    if kind not in INITIAL_KINDS:
        raise ConfigurationError(f"unknown initial condition {kind!r}")
    if "ground_state" in section:
        section["ground_state"] = GroundStateSource(**section["ground_state"])
    return INITIAL_KINDS[kind](**{k: _tuples(v) for k, v in section.items()})


def scenario_from_dict(config: Dict[str, Any]) -> Scenario:
    """Build a scenario from the sections of a JSON config."""
    try:
        coefficients = CnlsCoefficients(**{k: _tuples(v) for k, v in config["coefficients"].items()})
        domain = config["domain"]
        grid = config["grid"]
        time = config["time"]
        return Scenario(
            name=config.get("name", "scenario"),
            coefficients=coefficients,
            layout=DomainLayout(**domain),
            cells=(int(grid["cells_x"]), int(grid.get("cells_y", grid["cells_x"]))),
            pml=PmlParameters(**config.get("pml", {})),
            dt=time["dt"],
            t_end=time["t_end"],
            initial=_initial_from_dict(config.get("initial", {})),
            outputs=OutputConfig(**{k: _tuples(v) for k, v in config.get("outputs", {}).items()}),
            solver=SolverOptions(**config.get("solver", {})),
            sweep=SweepConfig(**_tuples_dict(config["sweep"])) if config.get("sweep") else None,
            desk=DeskScale(**config.get("desk", {})),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"invalid scenario config: {exc}") from exc


def _tuples_dict(section: Dict[str, Any]) -> Dict[str, Any]:
    return {k: _tuples(v) for k, v in section.items()}


def scenario_to_dict(scenario: Scenario) -> Dict[str, Any]:
    return {
        "name": scenario.name,
        "coefficients": asdict(scenario.coefficients),
        "domain": asdict(scenario.layout),
        "grid": {"cells_x": scenario.cells[0], "cells_y": scenario.cells[1]},
        "pml": asdict(scenario.pml),
        "time": {"dt": scenario.dt, "t_end": scenario.t_end},
        "initial": asdict(scenario.initial),
        "outputs": asdict(scenario.outputs),
        "solver": asdict(scenario.solver),
        "sweep": asdict(scenario.sweep) if scenario.sweep else None,
        "desk": asdict(scenario.desk),
    }


def save_scenario(path: str, scenario: Scenario) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, mode="w") as f:
        json.dump(scenario_to_dict(scenario), f, indent=2)


def load_scenario(name_or_path: str) -> Scenario:
    """Built-in scenario by name, or a config file by path."""
    if name_or_path in BUILTIN_SCENARIOS:
        path = os.path.join(CONFIG_DIR, name_or_path, "config.json")
    else:
        path = name_or_path
    if not os.path.isfile(path):
        raise ConfigurationError(
            f"unknown scenario {name_or_path!r}; built-in scenarios are {', '.join(BUILTIN_SCENARIOS)}"
        )
    with open(path, mode="r") as f:
        config = json.load(f)
    return scenario_from_dict(config)


def apply_scale(scenario: Scenario, scale: Union[str, float, None]) -> Scenario:
    """Reduced-size variant of a scenario.

    "desk" uses the declared desk cell counts; a factor 0 < f <= 1 multiplies
    the cell counts (at least 16 per side). Both replace t_end by the desk
    value when one is declared and drop output times past the new end.
    """
    if scale is None:
        return scenario
    if scale == "desk":
        cells = (scenario.desk.cells_x, scenario.desk.cells_y)
    else:
        try:
            factor = float(scale)
        except ValueError:
            raise ConfigurationError(f"scale must be 'desk' or a number, got {scale!r}") from None
        if not 0 < factor <= 1:
            raise ConfigurationError(f"scale factor must lie in (0, 1], got {factor}")
        cells = tuple(max(16, int(round(factor * c))) for c in scenario.cells)

    t_end = scenario.desk.t_end if scenario.desk.t_end is not None else scenario.t_end
    outputs = replace(
        scenario.outputs,
        snapshot_times=tuple(t for t in scenario.outputs.snapshot_times if t <= t_end),
        error_times=tuple(t for t in scenario.outputs.error_times if t <= t_end),
    )
    return replace(scenario, cells=cells, t_end=t_end, outputs=outputs)


def gaussian_function(
    initial: GaussianInitial, layout: DomainLayout, n_components: int
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """A e^{-((x-x0)/wx)^2 - ((y-y0)/wy)^2} in every component, as a function of (x, y)."""
    x0, y0 = initial.center if initial.center is not None else (layout.Lx / 2, layout.Ly / 2)
    wx, wy = initial.widths

    def evaluate(xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
        g = initial.amplitude * np.exp(-(((xx - x0) / wx) ** 2) - ((yy - y0) / wy) ** 2)
        return np.stack([g.astype(np.complex128)] * n_components)

    return evaluate


def resolve_ground_state(
    scenario: Scenario,
    source: GroundStateSource,
    cache_dir: Optional[str] = None,
    verbose: bool = True,
) -> GroundState:
    """Load the ground state from `source.path` or compute it (and store it there).

    Without a path the computed state is cached as `cache_dir/ground_state.snap`.
    """
    layout, grid = scenario.physical_grid()
    path = source.path
    if path is None and cache_dir is not None:
        path = os.path.join(cache_dir, "ground_state.snap")

    if path is not None and os.path.isfile(path):
        ground_state = load_ground_state(path)
        if ground_state.grid.shape != grid.shape or ground_state.coefficients != scenario.coefficients:
            raise ConfigurationError(
                f"ground state in {path} was computed for another grid or other coefficients"
            )
        if verbose:
            print(f"Ground state loaded from {path}.")
        return ground_state

    ground_state = ground_state_for(
        scenario.coefficients, layout, grid, steps=source.homotopy_steps, verbose=verbose
    )
    if verbose:
        print(
            f"Ground state converged (residual {ground_state.residual:.2e}, "
            f"boundary ratio {ground_state.boundary_ratio:.2e})."
        )
    if path is not None:
        save_ground_state(path, ground_state)
    return ground_state


def build_initial_state(
    scenario: Scenario,
    config: ScenarioConfig,
    ground_state: Optional[GroundState] = None,
    cache_dir: Optional[str] = None,
    verbose: bool = True,
) -> ComplexState:
    """Initial field on the full grid of `config`."""
    initial = scenario.initial
    layout, grid = config.layout, config.grid
    n = config.coefficients.n_components
    x, y = grid.coordinates(layout)
    xx, yy = np.meshgrid(x, y, indexing="ij")

    if isinstance(initial, GaussianInitial):
        return ComplexState(layout, grid, gaussian_function(initial, layout, n)(xx, yy))

    if isinstance(initial, FileInitial):
        state, _, _ = read_snapshot(initial.path)
        if state.grid.shape == grid.shape:
            return ComplexState(layout, grid, state.data)
        return embed_physical(state.data, layout, grid)

    if ground_state is None:
        ground_state = resolve_ground_state(scenario, initial.ground_state, cache_dir, verbose)
    state = embed_physical(ground_state.profile, layout, grid)

    if isinstance(initial, SolitonPlusGaussians):
        bumps = sum(
            np.exp(-initial.exponent * ((xx - p * layout.Lx) ** 2 + (yy - q * layout.Ly) ** 2))
            for p, q in initial.centers
        )
        return state.with_data(state.data + initial.amplitude * bumps[None])

    if isinstance(initial, KickedSoliton):
        kx, ky = initial.wavevector
        wave = np.exp(1j * (kx * (xx - layout.Lx / 2) + ky * (yy - layout.Ly / 2)))
        return state.with_data(state.data * wave[None])

    raise ConfigurationError(f"unsupported initial condition {initial!r}")

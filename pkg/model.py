import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Tuple, Union

import numpy as np

if TYPE_CHECKING:
    from pml import PmlParameters


class CnlsPmlError(Exception):
    """Base class for errors raised by the solver."""


class ConfigurationError(CnlsPmlError, ValueError):
    """Invalid configuration, coefficients or operation precondition."""


class NumericalFailure(CnlsPmlError, RuntimeError):
    """A numerical procedure failed (non-convergence, NaN, divergence)."""

    def __init__(self, message: str, time: Optional[float] = None) -> None:
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class ComponentCoefficients:
    """Dispersion coefficients of a single component."""

    alpha_x: float
    alpha_y: float
    beta: float

    @property
    def tilde_beta(self) -> float:
        return self.beta / math.sqrt(abs(self.alpha_x) * abs(self.alpha_y))


@dataclass(frozen=True)
class CnlsCoefficients:
    """Coefficients of the coupled system

        i u_t + (alpha_x u_xx + alpha_y u_yy + beta u_xy) + gamma N(u) = 0

    one triple (alpha_x, alpha_y, beta) per component.

    Attributes
    ----------
    alpha_x, alpha_y, beta : Tuple[float, ...]
        Per-component dispersion coefficients.
    gamma : float, default=0.0
        Nonlinearity strength, gamma = 0 gives the linear problem.
    eps_q : float, default=0.0
        Quintic coefficient.
    nonlinearity : str, optional
        Name of the nonlinearity in `discretization.NONLINEARITIES`;
        "cme2" for two components and "scalar" otherwise when omitted.
    """

    alpha_x: Tuple[float, ...]
    alpha_y: Tuple[float, ...]
    beta: Tuple[float, ...]
    gamma: float = 0.0
    eps_q: float = 0.0
    nonlinearity: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha_x", tuple(float(v) for v in self.alpha_x))
        object.__setattr__(self, "alpha_y", tuple(float(v) for v in self.alpha_y))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))

        n = len(self.alpha_x)
        if n == 0:
            raise ConfigurationError("at least one component is required")
        if self.nonlinearity is None:
            object.__setattr__(self, "nonlinearity", "cme2" if n == 2 else "scalar")
        if len(self.alpha_y) != n or len(self.beta) != n:
            raise ConfigurationError(
                f"alpha_x, alpha_y and beta must have the same length, got "
                f"{n}, {len(self.alpha_y)}, {len(self.beta)}"
            )
        for j, (ax, ay, b) in enumerate(zip(self.alpha_x, self.alpha_y, self.beta)):
            if not all(math.isfinite(v) for v in (ax, ay, b)):
                raise ConfigurationError(f"component {j}: non-finite coefficient")
            if ax * ay <= b * b:
                raise ConfigurationError(
                    f"component {j}: alpha_x*alpha_y = {ax * ay} must exceed "
                    f"beta^2 = {b * b}"
                )
            if math.copysign(1.0, ax) != math.copysign(1.0, ay):
                raise ConfigurationError(
                    f"component {j}: alpha_x and alpha_y must have the same sign"
                )

    @property
    def n_components(self) -> int:
        return len(self.alpha_x)

    def component(self, j: int) -> ComponentCoefficients:
        return ComponentCoefficients(self.alpha_x[j], self.alpha_y[j], self.beta[j])

    def tilde_beta(self, j: int) -> float:
        return self.component(j).tilde_beta

    def tilde_betas(self) -> np.ndarray:
        return np.array([self.tilde_beta(j) for j in range(self.n_components)])

    def interpolate(self, other: "CnlsCoefficients", t: float) -> "CnlsCoefficients":
        """Linear interpolation of the dispersion coefficients toward `other`.

        gamma, eps_q and the nonlinearity are taken from `self`.
        """
        if other.n_components != self.n_components:
            raise ConfigurationError("cannot interpolate between different sizes")

        def lerp(a, b):
            return tuple((1.0 - t) * u + t * v for u, v in zip(a, b))

        return replace(
            self,
            alpha_x=lerp(self.alpha_x, other.alpha_x),
            alpha_y=lerp(self.alpha_y, other.alpha_y),
            beta=lerp(self.beta, other.beta),
        )


@dataclass(frozen=True)
class DomainLayout:
    """Physical domain [0, Lx] x [0, Ly] surrounded by layers of width delta."""

    Lx: float
    Ly: float
    delta_x: float = 0.0
    delta_y: float = 0.0

    def __post_init__(self) -> None:
        if not (self.Lx > 0 and self.Ly > 0):
            raise ConfigurationError(f"Lx, Ly must be positive, got {self.Lx}, {self.Ly}")
        if self.delta_x < 0 or self.delta_y < 0:
            raise ConfigurationError("layer widths must be non-negative")

    @property
    def physical(self) -> "DomainLayout":
        return DomainLayout(self.Lx, self.Ly, 0.0, 0.0)


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the full box [-delta_x, Lx+delta_x] x [-delta_y, Ly+delta_y].

    Attributes
    ----------
    nx, ny : int
        Point counts including the outer boundary points.
    dx, dy : float
        Mesh widths.
    """

    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self) -> None:
        if self.nx < 9 or self.ny < 9:
            raise ConfigurationError(f"grid needs at least 9 points per side, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ConfigurationError("mesh widths must be positive")

    @classmethod
    def from_layout(cls, layout: DomainLayout, nx: int, ny: int) -> "GridSpec":
        return cls(
            nx,
            ny,
            (layout.Lx + 2 * layout.delta_x) / (nx - 1),
            (layout.Ly + 2 * layout.delta_y) / (ny - 1),
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    def coordinates(self, layout: DomainLayout) -> Tuple[np.ndarray, np.ndarray]:
        x = -layout.delta_x + self.dx * np.arange(self.nx)
        y = -layout.delta_y + self.dy * np.arange(self.ny)
        return x, y

    def physical_slices(self, layout: DomainLayout, rtol: float = 1e-9) -> Tuple[slice, slice]:
        """Index slices of the points of [0, Lx] x [0, Ly]."""
        slices = []
        for n, d, L, delta in (
            (self.nx, self.dx, layout.Lx, layout.delta_x),
            (self.ny, self.dy, layout.Ly, layout.delta_y),
        ):
            i0 = int(round(delta / d))
            cells = int(round(L / d))
            if (
                abs(i0 * d - delta) > rtol * max(1.0, delta)
                or abs(cells * d - L) > rtol * max(1.0, L)
                or 2 * i0 + cells != n - 1
            ):
                raise ConfigurationError(
                    f"grid (n={n}, d={d}) is not aligned with L={L}, delta={delta}"
                )
            slices.append(slice(i0, i0 + cells + 1))
        return slices[0], slices[1]


def build_grid(
    layout: DomainLayout, dx: float, dy: Optional[float] = None
) -> Tuple[DomainLayout, GridSpec]:
    """Choose an aligned grid for `layout` with (approximately) the given widths.

    dx is snapped to Lx / round(Lx / dx) so that x = 0 and x = Lx are grid
    points; the layer width is rounded up to a whole number of cells.

    Returns
    -------
    Tuple[DomainLayout, GridSpec]
        The layout with the rounded layer widths and the matching grid.
    """
    dy = dx if dy is None else dy
    if dx <= 0 or dy <= 0:
        raise ConfigurationError("mesh widths must be positive")

    def snap(L: float, d: float, delta: float) -> Tuple[int, int, float]:
        cells = max(1, int(round(L / d)))
        d = L / cells
        layer_cells = int(math.ceil(delta / d - 1e-9)) if delta > 0 else 0
        return cells, layer_cells, d

    cx, lx, dx = snap(layout.Lx, dx, layout.delta_x)
    cy, ly, dy = snap(layout.Ly, dy, layout.delta_y)
    aligned = DomainLayout(layout.Lx, layout.Ly, lx * dx, ly * dy)
    grid = GridSpec(cx + 2 * lx + 1, cy + 2 * ly + 1, dx, dy)
    return aligned, grid


@dataclass
class ComplexState:
    """N-component complex field on the full grid, data shape (N, nx, ny)."""

    layout: DomainLayout
    grid: GridSpec
    data: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3 or self.data.shape[1:] != self.grid.shape:
            raise ConfigurationError(
                f"state data of shape {self.data.shape} does not match grid {self.grid.shape}"
            )

    @property
    def n_components(self) -> int:
        return self.data.shape[0]

    def copy(self) -> "ComplexState":
        return ComplexState(self.layout, self.grid, self.data.copy(), self.time)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def with_data(self, data: np.ndarray, time: Optional[float] = None) -> "ComplexState":
        return ComplexState(self.layout, self.grid, data, self.time if time is None else time)


def restrict_to_physical(state: ComplexState) -> ComplexState:
    """Sub-field of `state` on [0, Lx] x [0, Ly].

    Parameters
    ----------
    state : ComplexState
        Field on the full box.

    Returns
    -------
    ComplexState
        Field on the physical domain with a layer-free layout; values are
        copied bit for bit.
    """
    sx, sy = state.grid.physical_slices(state.layout)
    data = state.data[:, sx, sy].copy()
    grid = GridSpec(data.shape[1], data.shape[2], state.grid.dx, state.grid.dy)
    return ComplexState(state.layout.physical, grid, data, state.time)


def embed_physical(
    field: np.ndarray, layout: DomainLayout, grid: GridSpec, time: float = 0.0
) -> ComplexState:
    """Zero-extend a field given on the physical points to the full box."""
    field = np.asarray(field, dtype=np.complex128)
    if field.ndim == 2:
        field = field[None]
    sx, sy = grid.physical_slices(layout)
    data = np.zeros((field.shape[0], grid.nx, grid.ny), dtype=np.complex128)
    if data[:, sx, sy].shape != field.shape:
        raise ConfigurationError(
            f"field of shape {field.shape} does not fit the physical domain "
            f"{data[:, sx, sy].shape}"
        )
    data[:, sx, sy] = field
    return ComplexState(layout, grid, data, time)


def l2_norm(
    field: Union[ComplexState, np.ndarray], dx: Optional[float] = None, dy: Optional[float] = None
) -> float:
    """Discrete L2 norm sqrt(sum |u|^2 dx dy) over all points and components."""
    if isinstance(field, ComplexState):
        data, dx, dy = field.data, field.grid.dx, field.grid.dy
    else:
        if dx is None or dy is None:
            raise ConfigurationError("dx and dy are required for arrays")
        data = np.asarray(field)
    return float(math.sqrt(np.sum(np.abs(data) ** 2) * dx * dy))


@dataclass
class SolverOptions:
    strategy: str = "auto"  # "direct", "krylov" or "auto"
    tol: float = 1e-10  # Krylov relative residual tolerance
    direct_limit: int = 400 * 400  # "auto" factorizes up to this many grid points
    check_residual: bool = True  # verify every solve against its right-hand side
    threads: int = 1  # per-component solves run in a thread pool when > 1


@dataclass
class OutputConfig:
    snapshot_times: Tuple[float, ...] = ()
    error_times: Tuple[float, ...] = ()
    diagnostics_every: int = 10  # steps between diagnostics records


@dataclass
class GaussianInitial:
    center: Optional[Tuple[float, float]] = None  # defaults to the center of the physical domain
    amplitude: float = 1.0
    widths: Tuple[float, float] = (1.0, 1.0)
    kind: str = "gaussian"


@dataclass
class GroundStateSource:
    path: Optional[str] = None  # snapshot of a converged ground state, computed if missing
    homotopy_steps: int = 10


@dataclass
class SolitonPlusGaussians:
    ground_state: GroundStateSource = field(default_factory=GroundStateSource)
    amplitude: float = 0.8
    exponent: float = 2.0
    # centers as fractions of (Lx, Ly)
    centers: Tuple[Tuple[float, float], ...] = (
        (0.5, 0.25),
        (0.5, 0.75),
        (0.25, 0.5),
        (0.75, 0.5),
    )
    kind: str = "soliton_plus_gaussians"


@dataclass
class KickedSoliton:
    ground_state: GroundStateSource = field(default_factory=GroundStateSource)
    wavevector: Tuple[float, float] = (6.0, 6.0)
    kind: str = "kicked_soliton"


@dataclass
class FileInitial:
    path: str = ""
    kind: str = "file"


InitialCondition = Union[GaussianInitial, SolitonPlusGaussians, KickedSoliton, FileInitial]


@dataclass
class ScenarioConfig:
    """Everything needed to integrate one scenario."""

    coefficients: CnlsCoefficients
    layout: DomainLayout
    grid: GridSpec
    pml: "PmlParameters"
    dt: float
    t_end: float
    initial_condition: InitialCondition = field(default_factory=GaussianInitial)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    name: str = "scenario"

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.t_end < self.dt * (1 - 1e-12):
            raise ConfigurationError(f"t_end={self.t_end} must be at least dt={self.dt}")
        for t in tuple(self.outputs.snapshot_times) + tuple(self.outputs.error_times):
            if t < 0 or t > self.t_end * (1 + 1e-12):
                raise ConfigurationError(f"output time {t} outside [0, {self.t_end}]")
        self.grid.physical_slices(self.layout)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))

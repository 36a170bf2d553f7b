import os
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from model import ComplexState, ConfigurationError, l2_norm, restrict_to_physical
from timestepper import Diagnostic


def _on_omega(state: ComplexState) -> ComplexState:
    if state.layout.delta_x == 0 and state.layout.delta_y == 0:
        return state
    return restrict_to_physical(state)


def relative_error(u_pml: ComplexState, u_ref: ComplexState) -> float:
    """||u_pml - u_ref|| / ||u_ref|| in L2 over the physical domain, all components.

    Both states are restricted to the physical domain; their grids there must
    coincide, no interpolation is done.
    """
    a, b = _on_omega(u_pml), _on_omega(u_ref)
    if a.data.shape != b.data.shape or not np.allclose(
        (a.grid.dx, a.grid.dy), (b.grid.dx, b.grid.dy), rtol=1e-12, atol=0
    ):
        raise ConfigurationError(
            f"grids differ on the physical domain: {a.data.shape} (dx={a.grid.dx}) "
            f"vs {b.data.shape} (dx={b.grid.dx})"
        )
    reference = l2_norm(b)
    if reference == 0:
        raise ConfigurationError("reference solution has zero norm on the physical domain")
    return l2_norm(a.data - b.data, a.grid.dx, a.grid.dy) / reference


@dataclass
class RateFit:
    """Model e_r = c * 10^(-p * delta)."""

    c: float
    p: float

    def __call__(self, delta):
        return self.c * 10.0 ** (-self.p * np.asarray(delta))


def fit_rate(points: Iterable[Tuple[float, float]]) -> RateFit:
    """Least-squares fit of log10(e_r) = log10(c) - p * delta."""
    points = list(points)
    if len(points) < 3:
        raise ConfigurationError(f"at least 3 points are needed for a rate fit, got {len(points)}")
    deltas, errors = np.array(points, dtype=float).T
    if np.any(errors <= 0):
        raise ConfigurationError("errors must be positive for a rate fit")
    slope, intercept = np.polyfit(deltas, np.log10(errors), 1)
    return RateFit(float(10.0**intercept), float(-slope))


def log_linear_correlation(deltas: Sequence[float], errors: Sequence[float]) -> float:
    """Pearson correlation of (delta, log10 e_r); -1 for an exact exponential decay."""
    return float(np.corrcoef(np.asarray(deltas, float), np.log10(np.asarray(errors, float)))[0, 1])


def max_abs_in_layers(state: ComplexState) -> float:
    """max |u| over the layer points, 0 without layers."""
    sx, sy = state.grid.physical_slices(state.layout)
    outside = np.ones(state.grid.shape, dtype=bool)
    outside[sx, sy] = False
    if not outside.any():
        return 0.0
    return float(np.max(np.abs(state.data[:, outside])))


def max_abs_in_omega(state: ComplexState) -> float:
    sx, sy = state.grid.physical_slices(state.layout)
    return float(np.max(np.abs(state.data[:, sx, sy])))


@dataclass
class SweepResult:
    """Relative errors at one measurement time for increasing layer widths."""

    deltas: List[float]
    errors: List[float]
    time: float
    fit: Optional[RateFit] = None
    excluded: List[float] = field(default_factory=list)  # widths left out of the fit

    def __post_init__(self) -> None:
        if len(self.deltas) != len(self.errors):
            raise ConfigurationError("deltas and errors differ in length")
        if np.any(np.diff(self.deltas) <= 0):
            raise ConfigurationError("layer widths must be strictly increasing")
        if np.any(np.asarray(self.errors) <= 0):
            raise ConfigurationError("relative errors must be positive")
        if self.fit is None and len(self.deltas) >= 3:
            self.fit = fit_rate(zip(self.deltas, self.errors))

    @property
    def correlation(self) -> float:
        return log_linear_correlation(self.deltas, self.errors)


def _prepare(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_errors_csv(path: str, results: Sequence[SweepResult]) -> None:
    rows = [(d, e, r.time) for r in results for d, e in zip(r.deltas, r.errors)]
    _prepare(path)
    np.savetxt(path, np.array(rows, dtype=float).reshape(-1, 3), delimiter=",",
               header="delta,e_r,time", comments="", fmt="%.17g")


def read_errors_csv(path: str) -> List[Tuple[float, float, float]]:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != 3:
        raise ConfigurationError(f"{path}: expected the columns delta,e_r,time")
    return [tuple(row) for row in table]


def write_diagnostics_csv(path: str, diagnostics: Sequence[Diagnostic]) -> None:
    rows = [(d.t, d.l2_omega, d.max_abs) for d in diagnostics]
    _prepare(path)
    np.savetxt(path, np.array(rows, dtype=float).reshape(-1, 3), delimiter=",",
               header="t,l2_omega,max_abs", comments="", fmt="%.17g")


def write_profile_csv(path: str, x: np.ndarray, sigma: np.ndarray) -> None:
    _prepare(path)
    np.savetxt(path, np.column_stack([x, sigma]), delimiter=",",
               header="x,sigma", comments="", fmt="%.17g")

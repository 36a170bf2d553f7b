import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from analysis import system_threshold
from model import CnlsCoefficients, ConfigurationError, DomainLayout, GridSpec

STEEPNESS = 12.0  # a(delta) = STEEPNESS / delta
SMOOTHING = 6.0  # second bracket is SMOOTHING times steeper


class PmlStabilityWarning(UserWarning):
    """Layer absorption exceeds the corner-layer stability threshold."""


@dataclass(frozen=True)
class PmlParameters:
    rho: float = math.pi / 4  # stretching angle
    hx: float = 0.0  # magnitude of sigma_x (close to its maximum)
    hy: float = 0.0  # magnitude of sigma_y

    def __post_init__(self) -> None:
        if not 0 < self.rho < math.pi / 2:
            raise ConfigurationError(f"rho must lie in (0, pi/2), got {self.rho}")
        if self.hx < 0 or self.hy < 0:
            raise ConfigurationError("profile magnitudes must be non-negative")


def _layer_brackets(h: float, L: float, delta: float, x: np.ndarray):
    a = STEEPNESS / delta
    right = x > L
    # left layer mirrors the right one about the physical domain
    z1 = np.where(right, a * (x - L - delta / 2), -a * (x + delta / 2))
    z2 = np.where(right, SMOOTHING * a * (x - L - delta / 8), -SMOOTHING * a * (x + delta / 8))
    return a, right, z1, z2


def sigma_eval(h: float, L: float, delta: float, x):
    """Absorption profile of a layer pair around [0, L].

        sigma(x) = h/4 [1 + tanh(a (x - L - delta/2))] [1 + tanh(6a (x - L - delta/8))],  x > L

    with a = 12/delta, mirrored for x < 0 and zero on [0, L]. Arguments
    outside [-delta, L + delta] are clamped to the box.

    Parameters
    ----------
    h : float
        Magnitude.
    L : float
        Length of the physical interval.
    delta : float
        Layer width, > 0.
    x : float or ndarray
        Evaluation points.

    Returns
    -------
    float or ndarray
        Non-negative profile values.
    """
    if not delta > 0:
        raise ConfigurationError(f"layer width must be positive, got {delta}")
    xs = np.clip(np.asarray(x, dtype=float), -delta, L + delta)
    _, _, z1, z2 = _layer_brackets(h, L, delta, xs)
    inside = (xs >= 0) & (xs <= L)
    value = np.where(inside, 0.0, h / 4 * (1 + np.tanh(z1)) * (1 + np.tanh(z2)))
    return float(value) if value.ndim == 0 else value


def sigma_derivative_eval(h: float, L: float, delta: float, x):
    """Analytic derivative of `sigma_eval` with respect to x."""
    if not delta > 0:
        raise ConfigurationError(f"layer width must be positive, got {delta}")
    xs = np.clip(np.asarray(x, dtype=float), -delta, L + delta)
    a, right, z1, z2 = _layer_brackets(h, L, delta, xs)
    t1, t2 = np.tanh(z1), np.tanh(z2)
    sign = np.where(right, 1.0, -1.0)
    d = h / 4 * sign * a * ((1 - t1**2) * (1 + t2) + SMOOTHING * (1 + t1) * (1 - t2**2))
    inside = (xs >= 0) & (xs <= L)
    value = np.where(inside, 0.0, d)
    return float(value) if value.ndim == 0 else value


def max_sigma(h: float, L: float, delta: float, n_samples: int = 4001) -> float:
    """Maximum of the profile sampled on the right layer."""
    if not delta > 0:
        raise ConfigurationError(f"layer width must be positive, got {delta}")
    x = np.linspace(L, L + delta, max(n_samples, 1000))
    return float(np.max(sigma_eval(h, L, delta, x)))


@dataclass
class StabilityReport:
    max_sigma_x: float
    max_sigma_y: float
    threshold: float

    @property
    def stable(self) -> bool:
        return max(self.max_sigma_x, self.max_sigma_y) < self.threshold


@dataclass
class AbsorptionProfile:
    """sigma_x on the grid x-coordinates and sigma_y on the y-coordinates."""

    layout: DomainLayout
    pml: PmlParameters
    x: np.ndarray
    y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    dsigma_x: np.ndarray
    dsigma_y: np.ndarray
    report: Optional[StabilityReport] = None

    def evaluate_x(self, x):
        if self.layout.delta_x == 0:
            return np.zeros_like(np.asarray(x, dtype=float))
        return sigma_eval(self.pml.hx, self.layout.Lx, self.layout.delta_x, x)

    def evaluate_y(self, y):
        if self.layout.delta_y == 0:
            return np.zeros_like(np.asarray(y, dtype=float))
        return sigma_eval(self.pml.hy, self.layout.Ly, self.layout.delta_y, y)


def _sample(h: float, L: float, delta: float, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if delta == 0 or h == 0:
        return np.zeros_like(coords), np.zeros_like(coords)
    return sigma_eval(h, L, delta, coords), sigma_derivative_eval(h, L, delta, coords)


def stability_report(
    layout: DomainLayout, pml: PmlParameters, coeffs: CnlsCoefficients
) -> StabilityReport:
    mx = max_sigma(pml.hx, layout.Lx, layout.delta_x) if layout.delta_x > 0 else 0.0
    my = max_sigma(pml.hy, layout.Ly, layout.delta_y) if layout.delta_y > 0 else 0.0
    return StabilityReport(mx, my, system_threshold(coeffs))


def build_profiles(
    layout: DomainLayout,
    grid: GridSpec,
    pml: PmlParameters,
    coeffs: Optional[CnlsCoefficients] = None,
) -> AbsorptionProfile:
    """Sample the absorption profiles on the grid.

    When `coeffs` is given the largest sigma is compared against the system
    stability threshold and a `PmlStabilityWarning` is issued if it is not
    below it; unstable layers stay a supported configuration.
    """
    grid.physical_slices(layout)
    x, y = grid.coordinates(layout)
    sigma_x, dsigma_x = _sample(pml.hx, layout.Lx, layout.delta_x, x)
    sigma_y, dsigma_y = _sample(pml.hy, layout.Ly, layout.delta_y, y)

    # points of the physical domain are exactly zero
    sx, sy = grid.physical_slices(layout)
    sigma_x[sx] = 0.0
    dsigma_x[sx] = 0.0
    sigma_y[sy] = 0.0
    dsigma_y[sy] = 0.0

    report = None
    if coeffs is not None:
        report = stability_report(layout, pml, coeffs)
        if not report.stable:
            warnings.warn(
                f"max sigma = {max(report.max_sigma_x, report.max_sigma_y):.4g} is not below "
                f"the stability threshold {report.threshold:.4g}; the layers may be unstable",
                PmlStabilityWarning,
                stacklevel=2,
            )

    return AbsorptionProfile(layout, pml, x, y, sigma_x, sigma_y, dsigma_x, dsigma_y, report)


@dataclass
class PmlCoefficientFields:
    """Coefficients of the layer derivatives

        d_x^PML = cx (d_x - phase * gx d_y),   d_y^PML = cy (d_y - phase * gy d_x)

    with phase = e^{i rho}. cx, dcx have shape (nx,), cy, dcy shape (ny,);
    gx, dgx have shape (N, nx) and gy, dgy shape (N, ny). The d-prefixed
    arrays are the derivatives along the line.
    """

    phase: complex
    cx: np.ndarray
    cy: np.ndarray
    dcx: np.ndarray
    dcy: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    dgx: np.ndarray
    dgy: np.ndarray

    @property
    def n_components(self) -> int:
        return self.gx.shape[0]


def build_coefficient_fields(
    profile: AbsorptionProfile, coeffs: CnlsCoefficients, rho: Optional[float] = None
) -> PmlCoefficientFields:
    rho = profile.pml.rho if rho is None else rho
    phase = complex(np.exp(1j * rho))

    cx = 1.0 / (1.0 + phase * profile.sigma_x)
    cy = 1.0 / (1.0 + phase * profile.sigma_y)
    dcx = -phase * profile.dsigma_x * cx**2
    dcy = -phase * profile.dsigma_y * cy**2

    gx_scale = np.array([b / (2 * ax) for ax, b in zip(coeffs.alpha_x, coeffs.beta)])
    gy_scale = np.array([b / (2 * ay) for ay, b in zip(coeffs.alpha_y, coeffs.beta)])
    gx = gx_scale[:, None] * profile.sigma_x[None, :]
    gy = gy_scale[:, None] * profile.sigma_y[None, :]
    dgx = gx_scale[:, None] * profile.dsigma_x[None, :]
    dgy = gy_scale[:, None] * profile.dsigma_y[None, :]

    return PmlCoefficientFields(phase, cx, cy, dcx, dcy, gx, gy, dgx, dgy)

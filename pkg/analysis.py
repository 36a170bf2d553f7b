import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from model import CnlsCoefficients, ComponentCoefficients, ConfigurationError

ArrayLike = Union[float, complex, np.ndarray]

SQRT2 = math.sqrt(2.0)


@dataclass
class DispersionPoint:
    """Frequency, x-group and x-phase velocity of a plane wave e^{i(kx x + ky y - omega t)}.

    Attributes
    ----------
    vp : Optional
        None where kx = 0 (scalar input); NaN entries for array input.
    """

    kx: ArrayLike
    ky: ArrayLike
    omega: ArrayLike
    vg: ArrayLike
    vp: Optional[ArrayLike]


@dataclass
class ModalPoint:
    s: complex
    ky: float
    lambda1: complex
    lambda2: complex


@dataclass
class StabilitySymbol:
    """Fourier symbol nu of a constant-sigma layer equation, u_t = nu u."""

    kx: ArrayLike
    ky: ArrayLike
    nu: ArrayLike


@dataclass
class TransformParams:
    """Change of variables (x, y) -> (a cos(theta) x - b sin(theta) y, a sin(theta) x + b cos(theta) y)
    and the per-component coefficients it produces.
    """

    a: float
    b: float
    theta: float
    alpha_x: Tuple[float, ...]
    alpha_y: Tuple[float, ...]
    beta: Tuple[float, ...]


@dataclass
class NotRemovable:
    reason: str


def dispersion(coeffs: ComponentCoefficients, kx: ArrayLike, ky: ArrayLike) -> DispersionPoint:
    """Dispersion relation omega = alpha_x kx^2 + alpha_y ky^2 + beta kx ky.

    Parameters
    ----------
    coeffs : ComponentCoefficients
        Coefficients of one component.
    kx, ky : float or ndarray
        Wavenumbers.

    Returns
    -------
    DispersionPoint
        omega, vg = d omega / d kx and vp = omega / kx.
    """
    omega = coeffs.alpha_x * np.square(kx) + coeffs.alpha_y * np.square(ky) + coeffs.beta * np.multiply(kx, ky)
    vg = 2 * coeffs.alpha_x * np.asarray(kx) + coeffs.beta * np.asarray(ky)

    if np.ndim(kx) == 0 and np.ndim(ky) == 0:
        omega, vg = float(omega), float(vg)
        vp = None if kx == 0 else omega / kx
    else:
        kx_b = np.broadcast_to(np.asarray(kx, dtype=float), np.shape(omega))
        with np.errstate(divide="ignore", invalid="ignore"):
            vp = np.where(kx_b != 0, omega / np.where(kx_b != 0, kx_b, 1.0), np.nan)
    return DispersionPoint(kx, ky, omega, vg, vp)


def opposite_velocity_interval(coeffs: ComponentCoefficients, ky: float) -> Tuple[float, float]:
    """kx interval in which the group and phase velocities have opposite signs.

    The interval lies between 0 and -beta ky / (2 alpha_x), returned ordered;
    it is empty (lo == hi) for beta ky = 0.
    """
    if coeffs.alpha_x == 0:
        raise ConfigurationError("alpha_x must be nonzero")
    edge = -coeffs.beta * ky / (2 * coeffs.alpha_x)
    return (min(0.0, edge), max(0.0, edge))


def rotation_center(coeffs: ComponentCoefficients, ky: ArrayLike) -> ArrayLike:
    return -0.5j * coeffs.beta * np.asarray(ky) / coeffs.alpha_x


def modal_lambdas(
    coeffs: ComponentCoefficients, s: ArrayLike, ky: ArrayLike
) -> Tuple[ArrayLike, ArrayLike]:
    """Roots of alpha_x l^2 + i beta ky l + (i s - alpha_y ky^2) = 0.

    The roots are labelled so that Re(lambda1) >= Re(lambda2). When the real
    parts coincide (Re s = 0) lambda1 is the limit of the Re s -> 0+ root,
    i.e. alpha_x * Im(lambda1 - center) <= 0.

    Parameters
    ----------
    coeffs : ComponentCoefficients
        Coefficients of one component.
    s : complex or ndarray
        Laplace variable, Re(s) >= 0.
    ky : float or ndarray
        Fourier variable in y.

    Returns
    -------
    Tuple
        (lambda1, lambda2), same shape as the broadcast inputs.
    """
    ax, ay, b = coeffs.alpha_x, coeffs.alpha_y, coeffs.beta
    if ax == 0:
        raise ConfigurationError("alpha_x = 0: degenerate modal equation")

    s = np.asarray(s, dtype=np.complex128)
    ky = np.asarray(ky, dtype=np.float64)
    center = rotation_center(coeffs, ky)
    disc = -(b * ky) ** 2 - 4 * ax * (1j * s - ay * ky**2)
    w = np.sqrt(disc.astype(np.complex128)) / (2 * ax)

    scale = np.abs(w) + np.abs(center) + 1.0
    tie = np.abs(w.real) <= 1e-14 * scale
    flip = np.where(tie, ax * w.imag > 0, w.real < 0)
    w = np.where(flip, -w, w)

    lambda1, lambda2 = center + w, center - w
    if lambda1.ndim == 0:
        return complex(lambda1), complex(lambda2)
    return lambda1, lambda2


def modal_point(coeffs: ComponentCoefficients, s: complex, ky: float) -> ModalPoint:
    lambda1, lambda2 = modal_lambdas(coeffs, s, ky)
    return ModalPoint(s, ky, lambda1, lambda2)


def pml_shifted_lambda(
    lam: ArrayLike, coeffs: ComponentCoefficients, ky: ArrayLike, rho: float, sigma: ArrayLike
) -> ArrayLike:
    """Modal exponent inside an x-layer with constant absorption sigma.

    lambda~ = lambda + (lambda + i beta ky / (2 alpha_x)) e^{i rho} sigma
    """
    shifted = lam + (lam - rotation_center(coeffs, ky)) * np.exp(1j * rho) * np.asarray(sigma)
    return complex(shifted) if np.ndim(shifted) == 0 else shifted


def rotated_lambda(lam: ArrayLike, coeffs: ComponentCoefficients, ky: ArrayLike, rho: float) -> ArrayLike:
    """Pure rotation of lambda by e^{i rho} about the rotation center.

    Damps the same modes as the shift but is not matched to the interior
    solution at the interface.
    """
    center = rotation_center(coeffs, ky)
    rotated = center + (lam - center) * np.exp(1j * rho)
    return complex(rotated) if np.ndim(rotated) == 0 else rotated


def scale_component(coeffs: ComponentCoefficients) -> Tuple[float, float, float]:
    """Scaling x -> |alpha_x|^{-1/2} x, y -> |alpha_y|^{-1/2} y of one component.

    Returns
    -------
    Tuple[float, float, float]
        (tilde_beta, x scale, y scale).
    """
    return (
        coeffs.tilde_beta,
        1.0 / math.sqrt(abs(coeffs.alpha_x)),
        1.0 / math.sqrt(abs(coeffs.alpha_y)),
    )


def corner_symbol(
    tilde_beta: float,
    sigma_x: ArrayLike,
    sigma_y: ArrayLike,
    rho: float,
    kx: ArrayLike,
    ky: ArrayLike,
) -> StabilitySymbol:
    """Fourier symbol of the scaled corner-layer equation with constant sigma_x, sigma_y.

    Parameters
    ----------
    tilde_beta : float
        Scaled mixed coefficient, |tilde_beta| < 1.
    sigma_x, sigma_y : float or ndarray
        Constant absorption values.
    rho : float
        Stretching angle.
    kx, ky : float or ndarray
        Wavenumbers.

    Returns
    -------
    StabilitySymbol
        nu(kx, ky) with u_t = nu u.
    """
    bt = tilde_beta
    e1 = np.exp(1j * rho)
    e2 = np.exp(2j * rho)
    sx = np.asarray(sigma_x, dtype=float)
    sy = np.asarray(sigma_y, dtype=float)
    kx = np.asarray(kx, dtype=float)
    ky = np.asarray(ky, dtype=float)
    mx = 1 + e1 * sx
    my = 1 + e1 * sy

    cxx = 1 / mx**2 + bt**2 * e2 * sy**2 / (4 * my**2) - bt**2 * e1 * sy / (2 * mx * my)
    cyy = 1 / my**2 + bt**2 * e2 * sx**2 / (4 * mx**2) - bt**2 * e1 * sx / (2 * mx * my)
    cxy = e1 * sx / mx**2 + e1 * sy / my**2 - (4 + e2 * bt**2 * sx * sy) / (4 * mx * my)

    nu = -1j * (kx**2 * cxx + ky**2 * cyy - bt * kx * ky * cxy)
    return StabilitySymbol(kx, ky, nu)


def corner_real_part_closed_form(tilde_beta: float, sigma: ArrayLike, kx: ArrayLike, ky: ArrayLike) -> ArrayLike:
    """Re(nu) of the corner symbol for sigma_x = sigma_y = sigma and rho = pi/4."""
    bt2 = tilde_beta**2
    sigma = np.asarray(sigma, dtype=float)
    kx = np.asarray(kx, dtype=float)
    ky = np.asarray(ky, dtype=float)
    pref = sigma / (4 * (sigma**2 + SQRT2 * sigma + 1) ** 2)
    p = 2 * SQRT2 * bt2 * sigma**2 + sigma * (bt2 - 4) - SQRT2 * (bt2 + 4)
    q = tilde_beta * (SQRT2 * sigma**2 * (bt2 + 4) + sigma * (bt2 - 4) - 8 * SQRT2)
    return pref * ((kx**2 + ky**2) * p + kx * ky * q)


def side_symbol(
    tilde_beta: float,
    sigma: ArrayLike,
    kx: ArrayLike,
    ky: ArrayLike,
    rho: float = math.pi / 4,
) -> StabilitySymbol:
    """Fourier symbol of the scaled x-side layer equation (sigma_y = 0).

    With q = kx + tilde_beta ky / 2 and mu = 1 + e^{i rho} sigma the symbol is

        nu = -i q^2 / mu^2 - i ky^2 (1 - tilde_beta^2 / 4)

    so for rho = pi/4, Re(nu) = -sigma (sqrt2 + sigma) / (sigma^2 + sqrt2 sigma + 1)^2 * q^2.
    """
    sigma = np.asarray(sigma, dtype=float)
    kx = np.asarray(kx, dtype=float)
    ky = np.asarray(ky, dtype=float)
    mu = 1 + np.exp(1j * rho) * sigma
    q = kx + 0.5 * tilde_beta * ky
    nu = -1j * q**2 / mu**2 - 1j * ky**2 * (1 - tilde_beta**2 / 4)
    return StabilitySymbol(kx, ky, nu)


def stability_discriminant(sigma: ArrayLike, tilde_beta: float) -> ArrayLike:
    """D(sigma); the corner layer with constant sigma is stable where D < 0."""
    bt2 = tilde_beta**2
    sigma = np.asarray(sigma, dtype=float)
    return bt2 * sigma**4 + SQRT2 * sigma * (bt2 * sigma**2 - 4) + (bt2 / 2 - 2) * sigma**2 - 4


def sigma_roots(tilde_beta: float) -> Tuple[complex, complex, complex, complex]:
    """The four closed-form roots (sigma1, sigma2, sigma3, sigma4) of D.

    Only defined for tilde_beta != 0; roots may be complex for some tilde_beta.
    """
    b = complex(tilde_beta)
    if b == 0:
        raise ConfigurationError("D has no quartic roots for tilde_beta = 0")
    r_plus = np.sqrt(b**2 + 12 * b + 4)
    r_minus = np.sqrt(b**2 - 12 * b + 4)
    pref = SQRT2 / (4 * b)
    sigma1 = pref * (2 - b + r_plus)
    sigma2 = pref * (2 - b - r_plus)
    sigma3 = -pref * (2 + b + r_minus)
    sigma4 = -pref * (2 + b - r_minus)
    return complex(sigma1), complex(sigma2), complex(sigma3), complex(sigma4)


def threshold_sigma1(tilde_beta: float) -> float:
    """Largest constant sigma for which the corner layer is stable.

    Parameters
    ----------
    tilde_beta : float
        Scaled mixed coefficient, |tilde_beta| < 1.

    Returns
    -------
    float
        sigma1(|tilde_beta|), using sigma3(b) = sigma1(-b) for negative values;
        math.inf for tilde_beta = 0 (unconditionally stable).
    """
    if not abs(tilde_beta) < 1:
        raise ConfigurationError(f"|tilde_beta| must be < 1, got {tilde_beta}")
    if tilde_beta == 0:
        return math.inf
    return sigma_roots(abs(tilde_beta))[0].real


def threshold_table(tilde_betas: np.ndarray) -> np.ndarray:
    """Columns (tilde_beta, sigma1) for the given values."""
    tilde_betas = np.asarray(tilde_betas, dtype=float)
    return np.column_stack([tilde_betas, [threshold_sigma1(b) for b in tilde_betas]])


def system_threshold(coeffs: CnlsCoefficients) -> float:
    return threshold_sigma1(float(np.max(np.abs(coeffs.tilde_betas()))))


def apply_transform(
    alpha_x: float, alpha_y: float, beta: float, a: float, b: float, theta: float
) -> Tuple[float, float, float]:
    """Coefficients (alpha_x', alpha_y', beta') in the rotated and scaled variables."""
    c2, s2 = math.cos(theta) ** 2, math.sin(theta) ** 2
    sin2, cos2 = math.sin(2 * theta), math.cos(2 * theta)
    new_ax = alpha_x * a * a * c2 + alpha_y * b * b * s2 - beta * a * b / 2 * sin2
    new_ay = alpha_x * a * a * s2 + alpha_y * b * b * c2 + beta * a * b / 2 * sin2
    new_b = (alpha_x * a * a - alpha_y * b * b) * sin2 + beta * a * b * cos2
    return new_ax, new_ay, new_b


def _is_zero(value: float, *scale: float, tol: float) -> bool:
    return abs(value) <= tol * max((1.0, *(abs(s) for s in scale)))


def find_removal_transform(
    coeffs: CnlsCoefficients, tol: float = 1e-12
) -> Union[TransformParams, NotRemovable]:
    """Find a change of variables removing every mixed derivative at once.

    The scale b is fixed to 1. If all ratios alpha_x/alpha_y agree the scale
    a = (alpha_y/alpha_x)^{1/2} zeroes alpha_x a^2 - alpha_y b^2 and theta = pi/4.
    Otherwise a is solved from

        a^2 (alpha_x1 beta_2 - alpha_x2 beta_1) = b^2 (alpha_y1 beta_2 - alpha_y2 beta_1)

    on the first two components and theta = -atan(B/A)/2 with
    A = alpha_x a^2 - alpha_y b^2, B = beta a b.

    Parameters
    ----------
    coeffs : CnlsCoefficients
        Valid coefficients.
    tol : float, default=1e-12
        Relative tolerance for equalities and the final mixed-coefficient check.

    Returns
    -------
    TransformParams or NotRemovable
    """
    ax, ay, bt = coeffs.alpha_x, coeffs.alpha_y, coeffs.beta
    n = coeffs.n_components
    b = 1.0

    if all(_is_zero(v, tol=tol) for v in bt):
        return TransformParams(1.0, 1.0, 0.0, ax, ay, tuple(0.0 for _ in bt))

    ratios = [x / y for x, y in zip(ax, ay)]
    if all(_is_zero(r - ratios[0], r, ratios[0], tol=tol) for r in ratios):
        a = math.sqrt(1.0 / ratios[0])
        theta = math.pi / 4
    else:
        a = None
        for j in range(1, n):
            p = ax[0] * bt[j] - ax[j] * bt[0]
            q = ay[0] * bt[j] - ay[j] * bt[0]
            p_zero = _is_zero(p, ax[0] * bt[j], ax[j] * bt[0], tol=tol)
            q_zero = _is_zero(q, ay[0] * bt[j], ay[j] * bt[0], tol=tol)
            if p_zero and q_zero:
                continue
            if p_zero or q_zero:
                return NotRemovable(
                    f"components 1 and {j + 1}: a^2 * {p:.6g} = {q:.6g} has no nonzero solution"
                )
            if q / p <= 0:
                return NotRemovable(
                    f"components 1 and {j + 1}: a^2 = {q / p:.6g} is not positive"
                )
            a = math.sqrt(q / p)
            break
        if a is None:
            a = 1.0

        theta = None
        for j in range(n):
            big_a = ax[j] * a * a - ay[j] * b * b
            big_b = bt[j] * a * b
            if _is_zero(big_a, ax[j] * a * a, ay[j] * b * b, tol=tol):
                if not _is_zero(big_b, tol=tol):
                    theta = math.pi / 4
                    break
                continue
            theta = -0.5 * math.atan(big_b / big_a)
            break
        if theta is None:
            theta = 0.0

    transformed = [apply_transform(ax[j], ay[j], bt[j], a, b, theta) for j in range(n)]
    for j, (new_ax, new_ay, new_b) in enumerate(transformed):
        scale = abs(ax[j]) * a * a + abs(ay[j]) * b * b + abs(bt[j]) * a * b
        if not _is_zero(new_b, scale, tol=tol):
            return NotRemovable(
                f"component {j + 1}: mixed coefficient {new_b:.3e} remains after the transform"
            )

    return TransformParams(
        a,
        b,
        theta,
        tuple(t[0] for t in transformed),
        tuple(t[1] for t in transformed),
        tuple(0.0 for _ in transformed),
    )

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import torch
from einops import rearrange
from scipy.integrate import simpson, solve_ivp
from scipy.special import k0
from tqdm.auto import tqdm

from discretization import GridDerivatives, get_nonlinearity
from model import (
    CnlsCoefficients,
    ComplexState,
    ComponentCoefficients,
    ConfigurationError,
    DomainLayout,
    GridSpec,
    NumericalFailure,
    l2_norm,
)


class LocalizationWarning(UserWarning):
    """The field is not localized away from the periodic boundary."""


def _device(device: Optional[torch.device] = None) -> torch.device:
    if device is not None:
        return device
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def _wavenumbers(n: int, d: float, device: torch.device) -> torch.Tensor:
    return 2 * math.pi * torch.fft.fftfreq(n, d=d, dtype=torch.float64, device=device)


def check_localization(field: np.ndarray, cells: int = 2, threshold: float = 1e-8) -> float:
    """Fraction of the mass within `cells` points of the box edge; warns above `threshold`."""
    mass = np.abs(field) ** 2
    total = float(mass.sum())
    if total == 0:
        return 0.0
    inner = mass[..., cells:-cells, cells:-cells].sum()
    fraction = (total - float(inner)) / total
    if fraction > threshold:
        warnings.warn(
            f"{fraction:.2e} of the mass lies within {cells} cells of the periodic boundary",
            LocalizationWarning,
            stacklevel=2,
        )
    return fraction


def spectral_evolve(
    field: np.ndarray,
    coeffs: ComponentCoefficients,
    t: float,
    dx: float,
    dy: float,
    device: Optional[torch.device] = None,
) -> np.ndarray:
    """Exact evolution of i u_t + (alpha_x u_xx + alpha_y u_yy + beta u_xy) = 0 on a periodic box.

    Parameters
    ----------
    field : ndarray
        Values of shape (..., nx, ny) on the periodic grid.
    coeffs : ComponentCoefficients
        Coefficients of the component.
    t : float
        Evolution time.
    dx, dy : float
        Mesh widths.
    device : torch.device, optional
        Device for the transforms, CUDA when available.

    Returns
    -------
    ndarray
        ifft2(exp(-i omega(kx, ky) t) fft2(field)).
    """
    check_localization(field)
    device = _device(device)
    u = torch.as_tensor(np.ascontiguousarray(field), dtype=torch.complex128, device=device)
    nx, ny = u.shape[-2:]
    kx = _wavenumbers(nx, dx, device)[:, None]
    ky = _wavenumbers(ny, dy, device)[None, :]
    omega = coeffs.alpha_x * kx**2 + coeffs.alpha_y * ky**2 + coeffs.beta * kx * ky
    multiplier = torch.exp(-1j * omega * t)
    out = torch.fft.ifft2(multiplier * torch.fft.fft2(u))
    return out.cpu().numpy()


@dataclass
class SpectralSolution:
    """Periodic box enlarged around the physical domain, sharing its grid points.

    The box has a power-of-two number of points per side, at least `factor`
    times the physical extent, and contains [0, Lx] x [0, Ly] at the offsets
    (ox, oy).
    """

    layout: DomainLayout
    dx: float
    dy: float
    factor: float = 4.0
    device: Optional[torch.device] = None
    nx: int = field(init=False)
    ny: int = field(init=False)
    ox: int = field(init=False)
    oy: int = field(init=False)

    def __post_init__(self) -> None:
        cells_x = int(round(self.layout.Lx / self.dx))
        cells_y = int(round(self.layout.Ly / self.dy))
        self.nx = 1 << int(math.ceil(math.log2(self.factor * cells_x)))
        self.ny = 1 << int(math.ceil(math.log2(self.factor * cells_y)))
        self.ox = (self.nx - cells_x) // 2
        self.oy = (self.ny - cells_y) // 2
        self._cells = (cells_x, cells_y)

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        return (
            self.dx * (np.arange(self.nx) - self.ox),
            self.dy * (np.arange(self.ny) - self.oy),
        )

    def sample(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        x, y = self.coordinates()
        xx, yy = np.meshgrid(x, y, indexing="ij")
        values = np.asarray(fn(xx, yy), dtype=np.complex128)
        return values if values.ndim == 3 else values[None]

    def evolve(self, field: np.ndarray, coeffs: CnlsCoefficients, t: float) -> np.ndarray:
        if coeffs.gamma != 0:
            raise ConfigurationError("the spectral reference solves the linear problem only")
        return np.stack(
            [
                spectral_evolve(field[j], coeffs.component(j), t, self.dx, self.dy, self.device)
                for j in range(field.shape[0])
            ]
        )

    def restrict(self, field: np.ndarray, time: float = 0.0) -> ComplexState:
        cells_x, cells_y = self._cells
        data = field[:, self.ox : self.ox + cells_x + 1, self.oy : self.oy + cells_y + 1]
        grid = GridSpec(cells_x + 1, cells_y + 1, self.dx, self.dy)
        return ComplexState(self.layout.physical, grid, data.copy(), time)


@dataclass
class RadialGroundState:
    """Nodeless solution of phi'' + phi'/r - phi + c3 phi^3 + c5 phi^5 = 0."""

    r: np.ndarray
    phi: np.ndarray
    amplitude: float
    power: float
    c3: float
    c5: float
    r_match: float

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return np.interp(r, self.r, self.phi, right=0.0)


def _shoot(phi0: float, c3: float, c5: float, eps: float, r_max: float):
    def rhs(r, y):
        return [y[1], -y[1] / r + y[0] - c3 * y[0] ** 3 - c5 * y[0] ** 5]

    def crossing(r, y):
        return y[0]

    def turning(r, y):
        return y[1]

    crossing.terminal, crossing.direction = True, -1
    turning.terminal, turning.direction = True, 1

    curvature = (phi0 - c3 * phi0**3 - c5 * phi0**5) / 4
    y0 = [phi0 + curvature * eps**2, 2 * curvature * eps]
    sol = solve_ivp(
        rhs,
        (eps, r_max),
        y0,
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        events=(crossing, turning),
        dense_output=True,
    )
    if sol.t_events[0].size:
        outcome = "overshoot"
    elif sol.t_events[1].size or y0[1] >= 0 or sol.y[0, -1] > 0:
        outcome = "undershoot"
    else:
        outcome = "overshoot"
    return outcome, sol


def shoot_radial_ground_state(
    c3: float,
    c5: float = 0.0,
    tol: float = 1e-13,
    r_max: float = 20.0,
    eps: float = 1e-8,
    n_points: int = 4001,
) -> RadialGroundState:
    """Radial ground state by bisection on phi(0).

    Too small a phi(0) turns back up before reaching zero (undershoot), too
    large a phi(0) crosses zero (overshoot). Beyond the radius where the two
    bracketing trajectories separate, the profile continues with the linear
    tail K0(r).

    Parameters
    ----------
    c3 : float
        Cubic coefficient, > 0.
    c5 : float, default=0.0
        Quintic coefficient.
    tol : float, default=1e-13
        Width of the final bisection bracket.
    r_max : float, default=20.0
        End of the radial interval.
    eps : float, default=1e-8
        Start radius of the series expansion at the origin.
    n_points : int, default=4001
        Samples of the returned profile.

    Returns
    -------
    RadialGroundState
    """
    if not c3 > 0:
        raise ConfigurationError(f"c3 must be positive (focusing), got {c3}")

    candidates = np.geomspace(0.05, 50.0, 80)
    lo = hi = None
    previous = None
    for phi0 in candidates:
        outcome, _ = _shoot(phi0, c3, c5, eps, r_max)
        if outcome == "overshoot":
            if previous is None:
                break
            lo, hi = previous, phi0
            break
        previous = phi0
    if lo is None:
        raise ConfigurationError(
            f"no bisection bracket for the ground state with c3={c3}, c5={c5}"
        )

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        outcome, _ = _shoot(mid, c3, c5, eps, r_max)
        if outcome == "overshoot":
            hi = mid
        else:
            lo = mid

    _, sol_lo = _shoot(lo, c3, c5, eps, r_max)
    _, sol_hi = _shoot(hi, c3, c5, eps, r_max)
    r_end = min(sol_lo.t[-1], sol_hi.t[-1])

    r = np.linspace(0.0, r_max, n_points)
    inside = (r >= eps) & (r <= r_end)
    phi_lo = sol_lo.sol(np.clip(r, eps, r_end))[0]
    phi_hi = sol_hi.sol(np.clip(r, eps, r_end))[0]
    mean = 0.5 * (phi_lo + phi_hi)
    spread = np.abs(phi_lo - phi_hi)
    separated = inside & (spread > 1e-3 * np.abs(mean))
    cut = int(np.argmax(separated)) - 1 if separated.any() else int(np.flatnonzero(inside)[-1])
    cut = max(cut, 1)
    r_match = r[cut]

    phi = mean.copy()
    phi[0] = lo
    tail = r > r_match
    phi[tail] = mean[cut] * k0(r[tail]) / k0(r_match)

    power = 2 * math.pi * simpson(phi**2 * r, x=r)
    return RadialGroundState(r, phi, 0.5 * (lo + hi), float(power), c3, c5, float(r_match))


def radial_coefficients(coeffs: CnlsCoefficients) -> Tuple[float, float]:
    """(c3, c5) of the radial equation for equal components phi."""
    if coeffs.nonlinearity == "cme2":
        return 4 * coeffs.gamma, coeffs.gamma * coeffs.eps_q
    return coeffs.gamma, coeffs.gamma * coeffs.eps_q


@dataclass
class GroundState:
    """Real positive profile phi_s with u = e^{it} phi_s solving the layer-free system.

    Attributes
    ----------
    profile : ndarray
        Shape (N, nx, ny) on the grid of the physical domain, zero on its boundary.
    residual : float
        Discrete L2 norm of L phi - phi + N(phi).
    boundary_ratio : float
        max |phi| on the ring next to the boundary over max phi.
    """

    profile: np.ndarray
    layout: DomainLayout
    grid: GridSpec
    coefficients: CnlsCoefficients
    residual: float
    residual_history: List[float] = field(default_factory=list)
    homotopy_parameter: float = 1.0
    frequency: float = 1.0

    @property
    def boundary_ratio(self) -> float:
        ring = np.ones(self.grid.shape, dtype=bool)
        ring[2:-2, 2:-2] = False
        peak = float(np.max(np.abs(self.profile)))
        return float(np.max(np.abs(self.profile[:, ring]))) / peak if peak else 0.0

    def time_factor(self, t: float) -> complex:
        return complex(np.exp(1j * self.frequency * t))

    def as_state(self) -> ComplexState:
        return ComplexState(self.layout, self.grid, self.profile.astype(np.complex128))


class StationarySystem:
    """Discrete L phi - phi + N(phi) = 0 with zero Dirichlet data on the boundary."""

    def __init__(self, coeffs: CnlsCoefficients, grid: GridSpec) -> None:
        self.coeffs = coeffs
        self.grid = grid
        self.derivatives = GridDerivatives.build(grid)
        self.interior = np.flatnonzero(self.derivatives.interior)
        self.nonlinearity = get_nonlinearity(coeffs)

        d = self.derivatives
        restrict = lambda m: m[self.interior][:, self.interior].tocsr()  # noqa: E731
        self.operators = []
        for j in range(coeffs.n_components):
            c = coeffs.component(j)
            op = c.alpha_x * d.dxx + c.alpha_y * d.dyy + c.beta * d.dxy
            self.operators.append(restrict(op))

    @property
    def size(self) -> int:
        return self.interior.size

    def unpack(self, u: np.ndarray) -> np.ndarray:
        """Full grid field (N, nx, ny) from interior values (N, M)."""
        full = np.zeros((u.shape[0], self.grid.nx * self.grid.ny), dtype=u.dtype)
        full[:, self.interior] = u
        return rearrange(full, "c (x y) -> c x y", x=self.grid.nx)

    def pack(self, field3: np.ndarray) -> np.ndarray:
        return rearrange(field3, "c x y -> c (x y)")[:, self.interior]

    def residual(self, u: np.ndarray) -> np.ndarray:
        nl = self.pack(self.nonlinearity(self.unpack(u), self.coeffs))
        return np.stack([op @ u[j] for j, op in enumerate(self.operators)]) - u + nl

    def residual_norm(self, u: np.ndarray) -> float:
        return l2_norm(self.residual(u), self.grid.dx, self.grid.dy)

    def wirtinger_blocks(self, u: np.ndarray) -> Tuple[List[List[sp.spmatrix]], List[List[sp.spmatrix]]]:
        """Blocks A[j][k] = dF_j/du_k and B[j][k] = dF_j/dconj(u_k) as sparse matrices."""
        du, dc = self.nonlinearity.wirtinger(self.unpack(u), self.coeffs)
        n = self.coeffs.n_components
        identity = sp.identity(self.size, format="csr")
        a = [[None] * n for _ in range(n)]
        b = [[None] * n for _ in range(n)]
        for j in range(n):
            for k in range(n):
                a_jk = sp.diags(self.pack(du[j, k][None])[0])
                if j == k:
                    a_jk = a_jk + self.operators[j] - identity
                a[j][k] = a_jk
                b[j][k] = sp.diags(self.pack(dc[j, k][None])[0])
        return a, b

    def real_split_jacobian(self, u: np.ndarray) -> sp.csr_matrix:
        """Jacobian of (Re F, Im F) with respect to (Re u, Im u)."""
        a, b = self.wirtinger_blocks(u)
        plus = sp.bmat([[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)])
        minus = sp.bmat([[x - y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)])
        return sp.bmat(
            [[plus.real, -minus.imag], [plus.imag, minus.real]], format="csr"
        )

    def real_jacobian(self, u: np.ndarray) -> sp.csc_matrix:
        """Real block of the Jacobian, d Re F / d Re u."""
        a, b = self.wirtinger_blocks(u)
        plus = sp.bmat([[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)])
        return plus.real.tocsc()


def newton_solve(
    system: StationarySystem,
    u: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 25,
) -> Tuple[np.ndarray, List[float]]:
    """Newton iteration for a real stationary profile.

    At real iterates of a system with real coefficients the real-split
    Jacobian is block diagonal, and its imaginary block is singular along the
    phase direction i*phi, so only the real block is solved.

    Returns
    -------
    Tuple[ndarray, List[float]]
        Converged interior values and the residual history.
    """
    u = np.real(u).astype(np.float64)
    history = [system.residual_norm(u)]
    for _ in range(max_iter):
        if history[-1] < tol:
            return u, history
        jac = system.real_jacobian(u)
        rhs = -np.real(system.residual(u)).ravel()
        step = spla.splu(jac).solve(rhs)
        u = u + step.reshape(u.shape)
        history.append(system.residual_norm(u))
        if not math.isfinite(history[-1]) or history[-1] > 1e3 * max(history[0], 1.0):
            break
    if history[-1] < tol:
        return u, history
    raise NumericalFailure(
        f"Newton iteration did not converge (residual history {['%.2e' % r for r in history]})"
    )


def continue_ground_state(
    start: GroundState,
    target: CnlsCoefficients,
    steps: int,
    tol: float = 1e-10,
    max_iter: int = 25,
    verbose: bool = True,
) -> GroundState:
    """Continue a ground state to new dispersion coefficients.

    All coefficients are interpolated linearly from `start.coefficients` to
    `target` over `steps` steps; at each step Newton's method is run from the
    previous profile. The start itself is polished first.

    Parameters
    ----------
    start : GroundState
        Profile at the homotopy start (its coefficients).
    target : CnlsCoefficients
        Target coefficients; gamma, eps_q and the nonlinearity must match.
    steps : int
        Number of homotopy steps, may be 0 only when target equals the start.
    tol : float, default=1e-10
        Newton residual tolerance in the discrete L2 norm.
    max_iter : int, default=25
        Newton iterations per step.
    verbose : bool, default=True
        Print progress.

    Returns
    -------
    GroundState
    """
    source = start.coefficients
    if (source.gamma, source.eps_q, source.nonlinearity) != (target.gamma, target.eps_q, target.nonlinearity):
        raise ConfigurationError("the homotopy only changes the dispersion coefficients")
    same = (source.alpha_x, source.alpha_y, source.beta) == (target.alpha_x, target.alpha_y, target.beta)
    if steps < 0 or (steps == 0 and not same):
        raise ConfigurationError(f"{steps} homotopy steps cannot reach the target coefficients")

    grid = start.grid
    u = StationarySystem(source, grid).pack(np.real(start.profile))
    last = 0.0
    history: List[float] = []
    for k in tqdm(range(steps + 1), desc="homotopy", disable=not verbose):
        lam = k / steps if steps else 1.0
        coeffs = target if same else source.interpolate(target, lam)
        system = StationarySystem(coeffs, grid)
        try:
            u, history = newton_solve(system, u, tol, max_iter)
        except NumericalFailure as exc:
            raise NumericalFailure(
                f"homotopy failed at parameter {lam:.4f}; last converged parameter {last:.4f} ({exc})"
            ) from exc
        if np.min(u) < -1e-12:
            raise NumericalFailure(
                f"profile lost positivity at homotopy parameter {lam:.4f} (min {np.min(u):.3e})"
            )
        last = lam
        if verbose:
            tqdm.write(f"lambda={lam:.3f} residual={history[-1]:.3e} iterations={len(history) - 1}")

    system = StationarySystem(target, grid)
    return GroundState(
        system.unpack(u),
        start.layout,
        grid,
        target,
        history[-1],
        history,
        homotopy_parameter=last,
    )


def ground_state_for(
    coeffs: CnlsCoefficients,
    layout: DomainLayout,
    grid: GridSpec,
    steps: int = 10,
    radial: Optional[RadialGroundState] = None,
    verbose: bool = True,
) -> GroundState:
    """Ground state on the physical domain: radial shooting, then continuation to `coeffs`.

    The radial profile is centered at (Lx/2, Ly/2) and copied into every
    component; the homotopy starts from alpha_x = alpha_y = 1, beta = 0.
    """
    layout = layout.physical
    grid.physical_slices(layout)
    if radial is None:
        radial = shoot_radial_ground_state(*radial_coefficients(coeffs))
    if verbose:
        print(f"Radial ground state: phi(0)={radial.amplitude:.10f}, power={radial.power:.6f}")

    x, y = grid.coordinates(layout)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    phi = radial(np.hypot(xx - layout.Lx / 2, yy - layout.Ly / 2))
    phi[0, :] = phi[-1, :] = phi[:, 0] = phi[:, -1] = 0.0

    n = coeffs.n_components
    symmetric = replace(coeffs, alpha_x=(1.0,) * n, alpha_y=(1.0,) * n, beta=(0.0,) * n)
    start = GroundState(np.stack([phi] * n), layout, grid, symmetric, math.inf)
    start = continue_ground_state(start, symmetric, 0, verbose=False)
    if verbose:
        print(f"Symmetric ground state polished (residual {start.residual:.2e}).")
    return continue_ground_state(start, coeffs, steps, verbose=verbose)

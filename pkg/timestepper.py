from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from einops import rearrange
from tqdm.auto import tqdm

from discretization import SparseOperator, assemble_operators, get_nonlinearity
from model import (
    ComplexState,
    ConfigurationError,
    NumericalFailure,
    ScenarioConfig,
    SolverOptions,
    l2_norm,
)
from pml import build_coefficient_fields, build_profiles

Matrix = Union[sp.spmatrix, SparseOperator]


@dataclass(frozen=True)
class ArkTableau:
    """Additive Runge-Kutta pair: explicit A_E and ESDIRK A_I sharing b and c.

    Attributes
    ----------
    a_explicit, a_implicit : ndarray
        Full (s, s) coefficient matrices, A_I including its diagonal gamma.
    b : ndarray
        Weights of the propagated solution.
    b_hat : ndarray
        Weights of the embedded lower order solution.
    c : ndarray
        Abscissae.
    gamma : float
        Diagonal of A_I from the second stage on.
    """

    a_explicit: np.ndarray
    a_implicit: np.ndarray
    b: np.ndarray
    b_hat: np.ndarray
    c: np.ndarray
    gamma: float
    name: str = ""

    @property
    def stages(self) -> int:
        return len(self.c)


def _lower(rows: List[List[float]], n: int, diagonal: float = 0.0) -> np.ndarray:
    a = np.zeros((n, n))
    for i, row in enumerate(rows):
        a[i, : len(row)] = row
        if i > 0:
            a[i, i] = diagonal
    return a


# Kennedy & Carpenter ARK4(3)6L[2]SA
ARK4_TABLEAU = ArkTableau(
    a_explicit=_lower(
        [
            [],
            [1 / 2],
            [13861 / 62500, 6889 / 62500],
            [
                -116923316275 / 2393684061468,
                -2731218467317 / 15368042101831,
                9408046702089 / 11113171139209,
            ],
            [
                -451086348788 / 2902428689909,
                -2682348792572 / 7519795681897,
                12662868775082 / 11960479115383,
                3355817975965 / 11060851509271,
            ],
            [
                647845179188 / 3216320057751,
                73281519250 / 8382639484533,
                552539513391 / 3454668386233,
                3354512671639 / 8306763924573,
                4040 / 17871,
            ],
        ],
        6,
    ),
    a_implicit=_lower(
        [
            [],
            [1 / 4],
            [8611 / 62500, -1743 / 31250],
            [5012029 / 34652500, -654441 / 2922500, 174375 / 388108],
            [
                15267082809 / 155376265600,
                -71443401 / 120774400,
                730878875 / 902184768,
                2285395 / 8070912,
            ],
            [82889 / 524892, 0, 15625 / 83664, 69875 / 102672, -2260 / 8211],
        ],
        6,
        diagonal=1 / 4,
    ),
    b=np.array([82889 / 524892, 0, 15625 / 83664, 69875 / 102672, -2260 / 8211, 1 / 4]),
    b_hat=np.array(
        [
            4586570599 / 29645900160,
            0,
            178811875 / 945068544,
            814220225 / 1159782912,
            -3700637 / 11593932,
            61727 / 225920,
        ]
    ),
    c=np.array([0, 1 / 2, 83 / 250, 31 / 50, 17 / 20, 1]),
    gamma=1 / 4,
    name="ARK4(3)6L[2]SA",
)


def order_condition_residuals(tableau: ArkTableau) -> Dict[str, float]:
    """Residuals of the order conditions up to order 4, coupling conditions included."""
    b, c = tableau.b, tableau.c
    parts = {"E": tableau.a_explicit, "I": tableau.a_implicit}
    ones = np.ones_like(c)

    res = {"b.1": b @ ones - 1, "b.c": b @ c - 1 / 2, "b.c2": b @ c**2 - 1 / 3, "b.c3": b @ c**3 - 1 / 4}
    for p, a in parts.items():
        res[f"A{p}.1-c"] = float(np.max(np.abs(a @ ones - c)))
        res[f"b.A{p}c"] = b @ (a @ c) - 1 / 6
        res[f"b.cA{p}c"] = b @ (c * (a @ c)) - 1 / 8
        res[f"b.A{p}c2"] = b @ (a @ c**2) - 1 / 12
        for q, a2 in parts.items():
            res[f"b.A{p}A{q}c"] = b @ (a @ (a2 @ c)) - 1 / 24
    return {k: abs(float(v)) for k, v in res.items()}


def verify_order_conditions(tableau: ArkTableau, tol: float = 1e-10) -> float:
    """Check the tableau structure and order conditions; returns the largest residual."""
    a_i = tableau.a_implicit
    if np.any(np.triu(tableau.a_explicit) != 0):
        raise NumericalFailure(f"{tableau.name}: explicit part is not strictly lower triangular")
    if np.any(np.triu(a_i, 1) != 0) or a_i[0, 0] != 0 or np.any(np.diag(a_i)[1:] != tableau.gamma):
        raise NumericalFailure(f"{tableau.name}: implicit part is not ESDIRK with diagonal gamma")

    residuals = order_condition_residuals(tableau)
    worst = max(residuals, key=residuals.get)
    if residuals[worst] > tol:
        raise NumericalFailure(
            f"{tableau.name}: order condition {worst} violated by {residuals[worst]:.3e}"
        )
    return residuals[worst]


def _as_matrix(op: Matrix) -> sp.csr_matrix:
    return op.matrix if isinstance(op, SparseOperator) else sp.csr_matrix(op)


class LinearSolver:
    """Solves (I - dt gamma i L_j) x = rhs for every component j.

    The shifted matrices are factorized (direct) or preconditioned with an
    incomplete factorization (krylov) once and reused for all stages and
    steps with the same dt.
    """

    def __init__(
        self,
        operators: Sequence[Matrix],
        dt: float,
        gamma: float,
        options: Optional[SolverOptions] = None,
    ) -> None:
        self.options = options or SolverOptions()
        self.dt = dt
        self.gamma = gamma

        matrices = [_as_matrix(op) for op in operators]
        size = matrices[0].shape[0]
        strategy = self.options.strategy
        if strategy == "auto":
            strategy = "direct" if size <= self.options.direct_limit else "krylov"
        if strategy not in ("direct", "krylov"):
            raise ConfigurationError(f"unknown solver strategy {self.options.strategy!r}")
        self.strategy = strategy

        identity = sp.identity(size, dtype=np.complex128, format="csc")
        self.matrices = [(identity - (dt * gamma * 1j) * m).tocsc() for m in matrices]

        if strategy == "direct":
            self._factors = [spla.splu(m) for m in self.matrices]
        else:
            self._factors = []
            for m in self.matrices:
                ilu = spla.spilu(m, drop_tol=1e-6, fill_factor=20)
                self._factors.append(spla.LinearOperator(m.shape, ilu.solve, dtype=np.complex128))

    @property
    def tolerance(self) -> float:
        return 1e-10 if self.strategy == "direct" else self.options.tol

    def solve(self, j: int, rhs: np.ndarray) -> np.ndarray:
        rhs_norm = np.linalg.norm(rhs)
        if rhs_norm == 0:
            return np.zeros_like(rhs)

        a = self.matrices[j]
        if self.strategy == "direct":
            x = self._factors[j].solve(rhs)
        else:
            x, info = spla.gmres(
                a, rhs, rtol=self.options.tol, atol=0.0, M=self._factors[j], restart=60, maxiter=200
            )
            if info != 0:
                residual = np.linalg.norm(a @ x - rhs) / rhs_norm
                raise NumericalFailure(
                    f"gmres did not converge for component {j} (info={info}, residual={residual:.3e})"
                )

        if self.options.check_residual:
            residual = np.linalg.norm(a @ x - rhs) / rhs_norm
            if residual > self.tolerance:
                raise NumericalFailure(
                    f"linear solve for component {j} left residual {residual:.3e} > {self.tolerance:.1e}"
                )
        return x

    def solve_all(self, rhs: np.ndarray) -> np.ndarray:
        n = rhs.shape[0]
        if self.options.threads > 1 and n > 1:
            with ThreadPoolExecutor(max_workers=min(n, self.options.threads)) as pool:
                return np.stack(list(pool.map(self.solve, range(n), rhs)))
        return np.stack([self.solve(j, rhs[j]) for j in range(n)])


@dataclass
class StepResult:
    u: np.ndarray
    error_estimate: float


def ark_step(
    u: np.ndarray,
    dt: float,
    operators: Sequence[Matrix],
    nonlinearity: Optional[Callable[[np.ndarray], np.ndarray]],
    tableau: ArkTableau,
    solver: LinearSolver,
) -> StepResult:
    """One IMEX additive Runge-Kutta step for u_t = i L u + F(u).

    Parameters
    ----------
    u : ndarray
        Flattened state of shape (N, M).
    dt : float
        Step size; `solver` must be prepared for it.
    operators : Sequence
        Generators L_j (sparse, M x M), one per component.
    nonlinearity : Callable, optional
        Explicit right-hand side F(u) of shape (N, M); None for the linear problem.
    tableau : ArkTableau
        Coefficients.
    solver : LinearSolver
        Shifted solves (I - dt gamma i L_j).

    Returns
    -------
    StepResult
        The new state and the max-norm of the embedded error estimate.
    """
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if abs(solver.dt - dt) > 1e-14 * dt or solver.gamma != tableau.gamma:
        raise ConfigurationError("linear solver was prepared for a different dt or tableau")

    matrices = [_as_matrix(op) for op in operators]
    a_e, a_i = tableau.a_explicit, tableau.a_implicit
    dtg = dt * tableau.gamma
    f_e: List[np.ndarray] = []
    f_i: List[np.ndarray] = []

    def explicit(v: np.ndarray) -> np.ndarray:
        return np.zeros_like(v) if nonlinearity is None else nonlinearity(v)

    for k in range(tableau.stages):
        if k == 0:
            stage = u
            f_i.append(np.stack([1j * (m @ stage[j]) for j, m in enumerate(matrices)]))
        else:
            rhs = u.copy()
            for l in range(k):
                if a_e[k, l]:
                    rhs += dt * a_e[k, l] * f_e[l]
                if a_i[k, l]:
                    rhs += dt * a_i[k, l] * f_i[l]
            stage = solver.solve_all(rhs)
            f_i.append((stage - rhs) / dtg)
        f_e.append(explicit(stage))

    increments = [fe + fi for fe, fi in zip(f_e, f_i)]
    u_new = u + dt * sum(w * inc for w, inc in zip(tableau.b, increments) if w)
    error = dt * sum((w - wh) * inc for w, wh, inc in zip(tableau.b, tableau.b_hat, increments))
    return StepResult(u_new, float(np.max(np.abs(error))))


@dataclass
class Diagnostic:
    step: int
    t: float
    l2_omega: float
    max_abs: float
    error_estimate: float = 0.0


@dataclass
class IntegrationResult:
    final_state: ComplexState
    snapshots: Dict[float, ComplexState] = field(default_factory=dict)
    diagnostics: List[Diagnostic] = field(default_factory=list)
    steps: int = 0


StepCallback = Callable[[int, float, ComplexState], None]


def integrate(
    config: ScenarioConfig,
    initial_state: ComplexState,
    callbacks: Sequence[StepCallback] = (),
    tableau: ArkTableau = ARK4_TABLEAU,
    verbose: bool = True,
) -> IntegrationResult:
    """Fixed-step integration of the layered system from 0 to config.t_end.

    Snapshots are taken at the steps nearest to the requested times and a
    diagnostics record (L2 norm over the physical domain, max |u|, embedded
    error estimate) every `config.outputs.diagnostics_every` steps. Each
    callback is called after every step with (step, t, state).
    """
    verify_order_conditions(tableau)
    layout, grid, coeffs = config.layout, config.grid, config.coefficients
    if initial_state.grid.shape != grid.shape or initial_state.n_components != coeffs.n_components:
        raise ConfigurationError(
            f"initial state {initial_state.data.shape} does not match the scenario "
            f"({coeffs.n_components}, {grid.nx}, {grid.ny})"
        )

    profile = build_profiles(layout, grid, config.pml, coeffs)
    fields = build_coefficient_fields(profile, coeffs)
    operators = assemble_operators(coeffs, fields, grid)
    solver = LinearSolver(operators, config.dt, tableau.gamma, config.solver)
    if verbose:
        print(f"Operators assembled ({grid.nx}x{grid.ny} points, {solver.strategy} solver).")

    nonlinearity = None
    if coeffs.gamma != 0:
        evaluate = get_nonlinearity(coeffs)

        def nonlinearity(v: np.ndarray) -> np.ndarray:
            field3 = rearrange(v, "c (x y) -> c x y", x=grid.nx)
            return 1j * rearrange(evaluate(field3, coeffs), "c x y -> c (x y)")

    sx, sy = grid.physical_slices(layout)
    boundary = np.ones(grid.shape, dtype=bool)
    boundary[1:-1, 1:-1] = False
    data = initial_state.data.copy()
    data[:, boundary] = 0.0
    u = rearrange(data, "c x y -> c (x y)")

    def as_state(v: np.ndarray, t: float) -> ComplexState:
        return ComplexState(layout, grid, rearrange(v, "c (x y) -> c x y", x=grid.nx), t)

    def record(step: int, t: float, v: np.ndarray, err: float) -> Diagnostic:
        field3 = rearrange(v, "c (x y) -> c x y", x=grid.nx)
        diag = Diagnostic(
            step, t, l2_norm(field3[:, sx, sy], grid.dx, grid.dy), float(np.max(np.abs(v))), err
        )
        if verbose:
            tqdm.write(f"t={t:.4f} l2_omega={diag.l2_omega:.6e} max_abs={diag.max_abs:.6e}")
        return diag

    n_steps = config.n_steps
    snapshot_steps: Dict[int, List[float]] = {}
    for t in config.outputs.snapshot_times:
        snapshot_steps.setdefault(int(round(t / config.dt)), []).append(t)

    result = IntegrationResult(as_state(u, 0.0).copy())
    every = max(1, config.outputs.diagnostics_every)
    result.diagnostics.append(record(0, 0.0, u, 0.0))
    for t_req in snapshot_steps.get(0, []):
        result.snapshots[t_req] = as_state(u, 0.0).copy()

    for step in tqdm(range(1, n_steps + 1), desc=config.name, disable=not verbose):
        t = step * config.dt
        out = ark_step(u, config.dt, operators, nonlinearity, tableau, solver)
        u = out.u
        if not np.isfinite(u).all():
            raise NumericalFailure(f"non-finite values at t={t:.6g}", time=t)

        if step % every == 0 or step == n_steps:
            result.diagnostics.append(record(step, t, u, out.error_estimate))
        for t_req in snapshot_steps.get(step, []):
            result.snapshots[t_req] = as_state(u, t).copy()
        for callback in callbacks:
            callback(step, t, as_state(u, t))

    result.final_state = as_state(u, n_steps * config.dt).copy()
    result.steps = n_steps
    return result


"""Time stepping for the semilinear system and the coupled relaxation SDE.

The full-implicit scheme treats diffusion and drift implicitly and the noise
amplitude explicitly:

    M (u_{k+1} - u_k) + dt A u_{k+1} - dt M f(u_{k+1}) = M (g(u_k): dW_k)

solved by Newton from the previous state.  The same stepper drives the fine
reference system and the coarse (plain or interpolation-reduced) system; the
coupled particle equation uses a drift-implicit update whose Milstein
correction vanishes for additive noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import time
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, StepError
from .rom import DeimModel, ReducedDeimOperator, online_update


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, final_time] into `steps` intervals."""

    final_time: float
    steps: int

    def __post_init__(self):
        if self.final_time <= 0 or self.steps < 1:
            raise ConfigurationError("time grid needs final_time > 0 and steps >= 1")

    @property
    def dt(self) -> float:
        return self.final_time / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.final_time, self.steps + 1)


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 25


@dataclass(frozen=True)
class Nonlinearity:
    """Nodewise scalar function with derivative, optionally reading an auxiliary field.

    `fprime_const` marks an affine state dependence (constant derivative), in
    which case the step Jacobian is state-independent and its factorization
    is cached per time-step size.
    """

    name: str
    func: Callable
    deriv: Callable
    uses_aux: bool = False
    is_zero: bool = False
    fprime_const: float | None = None

    def __call__(self, u: np.ndarray, aux: np.ndarray | None = None) -> np.ndarray:
        return self.func(u, aux) if self.uses_aux else self.func(u)

    def derivative(self, u: np.ndarray, aux: np.ndarray | None = None) -> np.ndarray:
        return self.deriv(u, aux) if self.uses_aux else self.deriv(u)


def _builders() -> dict[str, Callable[..., Nonlinearity]]:
    def zero() -> Nonlinearity:
        return Nonlinearity("zero", lambda u: np.zeros_like(u),
                            lambda u: np.zeros_like(u), is_zero=True, fprime_const=0.0)

    def constant(value: float = 1.0) -> Nonlinearity:
        # constant amplitude; globally Lipschitz with constant 0
        return Nonlinearity(f"constant({value})", lambda u: np.full_like(u, value),
                            lambda u: np.zeros_like(u), fprime_const=0.0)

    def linear(rate: float = 1.0) -> Nonlinearity:
        return Nonlinearity(f"linear({rate})", lambda u: rate * u,
                            lambda u: np.full_like(u, rate), fprime_const=rate)

    def scaled_cos(amplitude: float = 1.0) -> Nonlinearity:
        # amplitude*cos(u): globally Lipschitz with constant |amplitude|
        return Nonlinearity(f"scaled_cos({amplitude})",
                            lambda u: amplitude * np.cos(u),
                            lambda u: -amplitude * np.sin(u))

    def scaled_sin(amplitude: float = 1.0) -> Nonlinearity:
        return Nonlinearity(f"scaled_sin({amplitude})",
                            lambda u: amplitude * np.sin(u),
                            lambda u: amplitude * np.cos(u))

    def quadratic_plus(offset: float = 0.0) -> Nonlinearity:
        # u^2 + offset: Lipschitz on bounded state ranges only
        return Nonlinearity(f"quadratic_plus({offset})",
                            lambda u: u * u + offset, lambda u: 2.0 * u)

    def exp2v_sin(amplitude: float = 1.0) -> Nonlinearity:
        # amplitude*exp(2 v)*sin(u); v enters as the auxiliary field
        return Nonlinearity(
            f"exp2v_sin({amplitude})",
            lambda u, aux: amplitude * np.exp(2.0 * aux) * np.sin(u),
            lambda u, aux: amplitude * np.exp(2.0 * aux) * np.cos(u),
            uses_aux=True,
        )

    return {
        "zero": zero,
        "constant": constant,
        "linear": linear,
        "scaled_cos": scaled_cos,
        "scaled_sin": scaled_sin,
        "quadratic_plus": quadratic_plus,
        "exp2v_sin": exp2v_sin,
    }


NONLINEARITIES = _builders()


def make_nonlinearity(name: str, **params) -> Nonlinearity:
    if name not in NONLINEARITIES:
        raise ConfigurationError(
            f"unknown nonlinearity {name!r}; registered: {sorted(NONLINEARITIES)}"
        )
    return NONLINEARITIES[name](**params)


@dataclass
class StepInfo:
    iterations: int
    residual_norms: list[float]


class FineSystem:
    """Interior-node system with sparse operators and nodewise nonlinearities."""

    def __init__(self, M_int: sp.spmatrix, A_int: sp.spmatrix,
                 drift: Nonlinearity, diffusion: Nonlinearity):
        self.M = M_int.tocsr()
        self.A = A_int.tocsr()
        self.drift = drift
        self.diffusion = diffusion
        self._fixed_lu: dict[float, spla.SuperLU] = {}

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def mass_apply(self, u):
        return self.M @ u

    def stiff_apply(self, u):
        return self.A @ u

    def drift_vec(self, u, aux=None):
        if self.drift.is_zero:
            return np.zeros_like(u)
        return self.M @ self.drift(u, aux)

    def noise_vec(self, u, dw, aux=None):
        if dw is None or self.diffusion.is_zero:
            return np.zeros_like(u)
        return self.M @ (self.diffusion(u, aux) * dw)

    def solve_jacobian(self, u, dt, rhs, aux=None):
        if self.drift.fprime_const is not None:
            lu = self._fixed_lu.get(dt)
            if lu is None:
                J = (self.M + dt * self.A - dt * self.drift.fprime_const * self.M).tocsc()
                lu = spla.splu(J)
                self._fixed_lu[dt] = lu
            return lu.solve(rhs)
        fp = self.drift.derivative(u, aux)
        J = (self.M + dt * self.A - dt * self.M.multiply(fp[None, :])).tocsc()
        return spla.splu(J).solve(rhs)


class ReducedSystem:
    """Coarse-coefficient system; nonlinear terms either full-order or row-sampled."""

    def __init__(self, Mr: np.ndarray, Ar: np.ndarray, drift: Nonlinearity,
                 diffusion: Nonlinearity, R: np.ndarray, RtM: np.ndarray,
                 drift_op: ReducedDeimOperator | None = None,
                 noise_op: ReducedDeimOperator | None = None):
        self.Mr = Mr
        self.Ar = Ar
        self.drift = drift
        self.diffusion = diffusion
        self.R = R
        self.RtM = RtM
        self.drift_op = drift_op
        self.noise_op = noise_op
        self._fixed_lu: dict[float, tuple] = {}

    @property
    def dim(self) -> int:
        return self.Mr.shape[0]

    @property
    def interpolated(self) -> bool:
        return self.drift_op is not None

    def mass_apply(self, c):
        return self.Mr @ c

    def stiff_apply(self, c):
        return self.Ar @ c

    def _aux_rows(self, op: ReducedDeimOperator, aux):
        return None if aux is None else aux[op.model.indices]

    def drift_vec(self, c, aux=None):
        if self.drift.is_zero:
            return np.zeros_like(c)
        if self.drift_op is not None:
            return self.drift_op.term(c, self._aux_rows(self.drift_op, aux))
        return self.RtM @ self.drift(self.R @ c, aux)

    def noise_vec(self, c, dw, aux=None):
        if dw is None or self.diffusion.is_zero:
            return np.zeros_like(c)
        if self.noise_op is not None:
            rows = self.noise_op.model.indices
            return self.noise_op.hadamard_term(c, dw[rows],
                                               self._aux_rows(self.noise_op, aux))
        return self.RtM @ (self.diffusion(self.R @ c, aux) * dw)

    def _drift_jacobian(self, c, aux=None):
        if self.drift.is_zero:
            return np.zeros_like(self.Mr)
        if self.drift_op is not None:
            return self.drift_op.term_jacobian(c, self._aux_rows(self.drift_op, aux))
        fp = self.drift.derivative(self.R @ c, aux)
        return self.RtM @ (fp[:, None] * self.R)

    def solve_jacobian(self, c, dt, rhs, aux=None):
        if self.drift.fprime_const is not None:
            fac = self._fixed_lu.get(dt)
            if fac is None:
                J = self.Mr + dt * self.Ar - dt * self.drift.fprime_const * self.Mr
                fac = sla.lu_factor(J)
                self._fixed_lu[dt] = fac
            return sla.lu_solve(fac, rhs)
        J = self.Mr + dt * self.Ar - dt * self._drift_jacobian(c, aux)
        return np.linalg.solve(J, rhs)


def implicit_step(system, u_k: np.ndarray, dt: float,
                  dw: np.ndarray | None = None,
                  aux: np.ndarray | None = None,
                  aux_prev: np.ndarray | None = None,
                  newton: NewtonConfig = NewtonConfig()) -> tuple[np.ndarray, StepInfo]:
    """One step of the full-implicit scheme, Newton starting from the old state.

    The noise amplitude is evaluated at the previous state (with `aux_prev`),
    the drift at the new one (with `aux`).
    """
    b = system.mass_apply(u_k) + system.noise_vec(u_k, dw, aux_prev)
    # tolerance anchored at the step-data scale; plain 1e-10 is unreachable in
    # float64 once state magnitudes grow past O(1)
    scale = max(1.0, float(np.linalg.norm(b)))
    u = u_k.copy()
    norms: list[float] = []
    for it in range(newton.max_iter + 1):
        res = (system.mass_apply(u) + dt * system.stiff_apply(u)
               - dt * system.drift_vec(u, aux) - b)
        rnorm = float(np.linalg.norm(res))
        norms.append(rnorm)
        if rnorm <= newton.tol * scale:
            return u, StepInfo(iterations=it, residual_norms=norms)
        if it == newton.max_iter:
            break
        u = u - system.solve_jacobian(u, dt, res, aux)
    raise StepError(
        f"Newton did not reach tol={newton.tol} in {newton.max_iter} iterations "
        f"(last residual {norms[-1]:.3e})",
        iterations=newton.max_iter,
        residual_norm=norms[-1],
    )


def drift_implicit_sde_step(v_k: np.ndarray, u_k: np.ndarray, dt: float,
                            dw: np.ndarray, theta: float, sigma: float) -> np.ndarray:
    """Drift-implicit update of dv = -theta (v - u) dt + sigma dW, nodewise.

    Additive noise makes the Milstein correction vanish, so this coincides
    with the drift-implicit Euler-Maruyama update.
    """
    return (v_k + theta * dt * u_k + sigma * dw) / (1.0 + theta * dt)


@dataclass(frozen=True)
class CoupledConfig:
    """Relaxation SDE coupled to the diffusion equation (solved sequentially)."""

    theta: float
    sigma: float
    v0: np.ndarray


@dataclass(frozen=True)
class DeimSetup:
    """Offline interpolation models plus the step window used for online data."""

    drift_model: DeimModel
    noise_model: DeimModel | None
    online_window: np.ndarray  # state indices (1-based steps) collected online


@dataclass
class Problem:
    """Everything a single trajectory run needs, shared across solver modes."""

    M_int: sp.spmatrix
    A_int: sp.spmatrix
    interior: np.ndarray
    drift: Nonlinearity
    diffusion: Nonlinearity
    u0: np.ndarray                 # interior nodal initial state
    grid: TimeGrid
    newton: NewtonConfig = NewtonConfig()
    R: np.ndarray | None = None    # dense interior-by-coarse basis
    RtM: np.ndarray | None = None
    Mr: np.ndarray | None = None
    Ar: np.ndarray | None = None
    deim: DeimSetup | None = None
    coupled: CoupledConfig | None = None

    @classmethod
    def build(cls, ops, space=None, *, drift, diffusion, u0_full, grid,
              newton=NewtonConfig(), deim=None, coupled=None) -> "Problem":
        """Assemble from an OperatorSet and optional MultiscaleSpace."""
        u0 = np.asarray(u0_full)[ops.interior]
        R = RtM = Mr = Ar = None
        if space is not None:
            R = np.ascontiguousarray(space.R[ops.interior].toarray())
            RtM = np.ascontiguousarray((ops.M_int @ R).T)  # M symmetric
            Mr = RtM @ R
            Ar = R.T @ (ops.A_int @ R)
        return cls(M_int=ops.M_int, A_int=ops.A_int, interior=ops.interior,
                   drift=drift, diffusion=diffusion, u0=u0, grid=grid,
                   newton=newton, R=R, RtM=RtM, Mr=Mr, Ar=Ar,
                   deim=deim, coupled=coupled)

    def coarse_initial_state(self) -> np.ndarray:
        return np.linalg.solve(self.Mr, self.RtM @ self.u0)


SOLVER_MODES = ("fine-reference", "ms-newton", "ms-deim-offline", "ms-deim-online")


@dataclass
class TrajectoryResult:
    mode: str
    states: np.ndarray                 # (steps+1, dim): interior or coarse coeffs
    timings: dict[str, float]
    newton_iterations: list[int]
    v_states: np.ndarray | None = None
    update_records: dict = field(default_factory=dict)

    def fine_states(self, problem: Problem) -> np.ndarray:
        """Interior nodal fields at every time level."""
        if self.mode == "fine-reference":
            return self.states
        return self.states @ problem.R.T


def _fine_system(problem: Problem) -> FineSystem:
    return FineSystem(problem.M_int, problem.A_int, problem.drift, problem.diffusion)


def _reduced_system(problem: Problem, drift_model: DeimModel | None = None,
                    noise_model: DeimModel | None = None) -> ReducedSystem:
    if problem.R is None:
        raise ConfigurationError("problem has no multiscale space; build with space=...")
    drift_op = noise_op = None
    if drift_model is not None:
        drift_op = ReducedDeimOperator.build(drift_model, problem.drift,
                                             problem.R, problem.RtM)
        if noise_model is not None:
            noise_op = ReducedDeimOperator.build(noise_model, problem.diffusion,
                                                 problem.R, problem.RtM)
    return ReducedSystem(problem.Mr, problem.Ar, problem.drift, problem.diffusion,
                         problem.R, problem.RtM, drift_op, noise_op)


def _integrate(problem: Problem, system, state0: np.ndarray, noise_path,
               reconstruct: Callable | None,
               collect_steps: np.ndarray | None = None,
               n_steps: int | None = None):
    """Shared stepping loop; optionally collects full nonlinear evaluations."""
    grid = problem.grid
    dt = grid.dt
    n_steps = grid.steps if n_steps is None else n_steps
    states = np.empty((n_steps + 1, state0.size))
    states[0] = state0
    iterations: list[int] = []
    coupled = problem.coupled
    v_states = None
    v = None
    if coupled is not None:
        if noise_path is None:
            raise ConfigurationError("coupled runs need a noise path for the SDE")
        v = np.asarray(coupled.v0, dtype=float).copy()
        v_states = np.empty((n_steps + 1, v.size))
        v_states[0] = v
    collected_f = {} if collect_steps is not None else None
    collected_g = {} if collect_steps is not None else None
    collect_set = set() if collect_steps is None else set(int(s) for s in collect_steps)

    state = state0.copy()
    for k in range(n_steps):
        dw = None if noise_path is None else noise_path.increments[k][problem.interior]
        aux = aux_prev = None
        if coupled is not None:
            u_fine = state if reconstruct is None else reconstruct(state)
            v_next = drift_implicit_sde_step(v, u_fine, dt, dw, coupled.theta,
                                             coupled.sigma)
            aux = v_next
            aux_prev = v
            dw_pde = None  # noise enters through the particle equation only
        else:
            dw_pde = dw
        try:
            state, info = implicit_step(system, state, dt, dw_pde, aux=aux,
                                        aux_prev=aux_prev, newton=problem.newton)
        except StepError as err:
            raise StepError(f"step {k}: {err}", err.iterations, err.residual_norm,
                            step_index=k) from err
        states[k + 1] = state
        iterations.append(info.iterations)
        if coupled is not None:
            v = v_next
            v_states[k + 1] = v
        if (k + 1) in collect_set:
            u_fine = state if reconstruct is None else reconstruct(state)
            collected_f[k + 1] = problem.drift(u_fine, aux)
            if not problem.diffusion.is_zero:
                collected_g[k + 1] = problem.diffusion(u_fine, aux)
    return states, v_states, iterations, collected_f, collected_g


def run_trajectory(problem: Problem, noise_path, mode: str) -> TrajectoryResult:
    """Integrate one trajectory in the requested solver mode with phase timings."""
    if mode not in SOLVER_MODES:
        raise ConfigurationError(f"unknown solver mode {mode!r}; choose from {SOLVER_MODES}")
    timings: dict[str, float] = {}

    if mode == "fine-reference":
        system = _fine_system(problem)
        t0 = time.perf_counter()
        states, v_states, iters, _, _ = _integrate(problem, system, problem.u0,
                                                   noise_path, None)
        timings["stepping"] = time.perf_counter() - t0
        return TrajectoryResult(mode, states, timings, iters, v_states)

    c0 = problem.coarse_initial_state()
    reconstruct = lambda c: problem.R @ c

    if mode == "ms-newton":
        system = _reduced_system(problem)
        t0 = time.perf_counter()
        states, v_states, iters, _, _ = _integrate(problem, system, c0,
                                                   noise_path, reconstruct)
        timings["stepping"] = time.perf_counter() - t0
        return TrajectoryResult(mode, states, timings, iters, v_states)

    if problem.deim is None:
        raise ConfigurationError(f"mode {mode} requires offline interpolation models")
    setup = problem.deim

    if mode == "ms-deim-offline":
        system = _reduced_system(problem, setup.drift_model, setup.noise_model)
        t0 = time.perf_counter()
        states, v_states, iters, _, _ = _integrate(problem, system, c0,
                                                   noise_path, reconstruct)
        timings["stepping"] = time.perf_counter() - t0
        return TrajectoryResult(mode, states, timings, iters, v_states)

    # ms-deim-online: window pass with the offline model to gather new data,
    # residual-driven basis update, then a full re-integration on the same path.
    window = np.asarray(setup.online_window, dtype=int)
    offline_system = _reduced_system(problem, setup.drift_model, setup.noise_model)
    t0 = time.perf_counter()
    _, _, _, coll_f, coll_g = _integrate(problem, offline_system, c0,
                                         noise_path, reconstruct,
                                         collect_steps=window,
                                         n_steps=int(window.max()))
    timings["window_pass"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    F = np.column_stack([coll_f[s] for s in window])
    drift_model, drift_rec = online_update(setup.drift_model, F)
    records = {"drift": drift_rec}
    noise_model = setup.noise_model
    if setup.noise_model is not None and coll_g:
        G = np.column_stack([coll_g[s] for s in window])
        noise_model, noise_rec = online_update(setup.noise_model, G)
        records["noise"] = noise_rec
    timings["online_update"] = time.perf_counter() - t0

    system = _reduced_system(problem, drift_model, noise_model)
    t0 = time.perf_counter()
    states, v_states, iters, _, _ = _integrate(problem, system, c0,
                                               noise_path, reconstruct)
    timings["stepping"] = time.perf_counter() - t0
    return TrajectoryResult(mode, states, timings, iters, v_states,
                            update_records=records)

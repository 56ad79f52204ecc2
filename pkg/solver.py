"""Solver - augmented-Lagrangian NLP solver, initial guesses and plan extraction.

`AugmentedLagrangianSolver` is the built-in method: an outer loop over
multiplier and penalty updates, with scipy's L-BFGS-B solving each
bound-constrained subproblem. `TrustConstrSolver` adapts scipy's
trust-constr method behind the same `NlpSolver` protocol. Both work on any
object exposing `lower`, `upper`, `n_eq`, `n_ineq`, `complementarity_mask`
and `evaluate(x)`; `TranscribedProgram` and `CallbackProblem` do.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.optimize import BFGS, Bounds, NonlinearConstraint, least_squares, minimize

from dynamics import CONTROL_DIM, transition, wrap_angles
from errors import InfeasiblePlanError, SolverError
from geometry import FOV_FACES, CUBE_FACES
from program import (DecisionVector, MissionSpec, TranscribedProgram, audit_violations, belief_trajectory,
                     certificate, fov_schedule, layout_for, obstacle_face_schedule, transcribe,
                     visit_steps)

logger = logging.getLogger(__name__)

STATUSES = ('optimal', 'feasible', 'iteration_limit', 'infeasible')
FD_STEP = 1e-6


# ============================================================================
# Configuration and reports
# ============================================================================

@dataclass(frozen=True)
class SolverConfig:
    max_outer_iters: int = 30
    max_inner_iters: int = 300
    penalty_init: float = 10.0
    penalty_growth: float = 5.0
    penalty_max: float = 1e9
    constraint_tol: float = 1e-4
    optimality_tol: float = 1e-5
    relax_schedule: Tuple[float, ...] = (1e-1, 1e-2, 1e-3, 0.0)
    seed: int = 0
    multistarts: int = 4
    workers: int = 1
    method: str = 'auglag'

    def __post_init__(self):
        if self.constraint_tol <= 0.0 or self.optimality_tol <= 0.0:
            raise SolverError("tolerances must be positive")
        if self.penalty_growth <= 1.0:
            raise SolverError(f"penalty_growth must exceed 1, got {self.penalty_growth}")
        if self.penalty_init <= 0.0:
            raise SolverError(f"penalty_init must be positive, got {self.penalty_init}")
        if self.multistarts < 1 or self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise SolverError("iteration and multistart counts must be at least 1")
        if not self.relax_schedule or self.relax_schedule[-1] != 0.0:
            raise SolverError("relax_schedule must end with 0")
        if self.method not in ('auglag', 'trust-constr'):
            raise SolverError(f"unknown solver method '{self.method}'")


@dataclass(frozen=True)
class TraceRecord:
    """One outer iteration, in the style of an audit log entry."""
    iteration: int
    action: str
    penalty: float
    epsilon: float
    violation: float
    objective: float
    accepted: bool
    timestamp: float = field(default=0.0, compare=False)

    def __str__(self) -> str:
        stamp = time.strftime('%H:%M:%S', time.localtime(self.timestamp))
        return (f"[{stamp}] {self.action} #{self.iteration}: penalty={self.penalty:.3g} "
                f"eps={self.epsilon:.1e} violation={self.violation:.3e} "
                f"objective={self.objective:.6g} {'accepted' if self.accepted else 'rejected'}")


@dataclass(frozen=True)
class SolveReport:
    status: str
    objective: float
    max_violation: float
    iterations: int
    wall_time: float = field(compare=False)
    trace: Tuple[TraceRecord, ...] = ()
    start_index: int = 0
    message: str = ""

    @property
    def succeeded(self) -> bool:
        return self.status in ('optimal', 'feasible')

    def summary(self) -> str:
        return (f"status={self.status} objective={self.objective:.6g} "
                f"max_violation={self.max_violation:.3e} iterations={self.iterations} "
                f"start={self.start_index} time={self.wall_time:.1f}s")


# ============================================================================
# Problems
# ============================================================================

class NlpProblem(Protocol):
    lower: np.ndarray
    upper: np.ndarray
    n_eq: int
    n_ineq: int
    complementarity_mask: np.ndarray

    def evaluate(self, x: np.ndarray):
        """Object with `objective`, `eq`, `ineq` and `gradient(w, y_eq, y_ineq)`."""


class _CallbackEvaluation:
    def __init__(self, problem: 'CallbackProblem', x: np.ndarray):
        self.problem = problem
        self.x = x
        self.objective = float(problem.objective_fn(x))
        self.eq = np.asarray(problem.eq_fn(x), dtype=float).reshape(-1)
        self.ineq = np.asarray(problem.ineq_fn(x), dtype=float).reshape(-1)

    def _scalar(self, x, w, y_eq, y_ineq) -> float:
        p = self.problem
        return (w * float(p.objective_fn(x)) + float(y_eq @ np.asarray(p.eq_fn(x)).reshape(-1))
                + float(y_ineq @ np.asarray(p.ineq_fn(x)).reshape(-1)))

    def gradient(self, objective_weight: float = 1.0, eq_weights=None, ineq_weights=None) -> np.ndarray:
        p = self.problem
        y_eq = np.zeros(p.n_eq) if eq_weights is None else np.asarray(eq_weights, dtype=float)
        y_ineq = np.zeros(p.n_ineq) if ineq_weights is None else np.asarray(ineq_weights, dtype=float)
        if p.gradient_fn is not None and (p.n_eq == 0 or p.eq_jacobian is not None) \
                and (p.n_ineq == 0 or p.ineq_jacobian is not None):
            grad = objective_weight * np.asarray(p.gradient_fn(self.x), dtype=float)
            if p.n_eq:
                grad = grad + np.asarray(p.eq_jacobian(self.x)).T @ y_eq
            if p.n_ineq:
                grad = grad + np.asarray(p.ineq_jacobian(self.x)).T @ y_ineq
            return grad
        # central differences
        grad = np.zeros_like(self.x)
        for i in range(self.x.size):
            h = FD_STEP * max(1.0, abs(self.x[i]))
            xp, xm = self.x.copy(), self.x.copy()
            xp[i] += h
            xm[i] -= h
            grad[i] = (self._scalar(xp, objective_weight, y_eq, y_ineq)
                       - self._scalar(xm, objective_weight, y_eq, y_ineq)) / (2.0 * h)
        return grad


class CallbackProblem:
    """Problem assembled from plain callables; missing gradients use central differences."""

    def __init__(self, objective: Callable, lower: Sequence[float], upper: Sequence[float],
                 gradient: Optional[Callable] = None, equalities: Optional[Callable] = None,
                 inequalities: Optional[Callable] = None, eq_jacobian: Optional[Callable] = None,
                 ineq_jacobian: Optional[Callable] = None, complementarity_mask=None):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.objective_fn = objective
        self.gradient_fn = gradient
        self.eq_fn = equalities or (lambda x: np.zeros(0))
        self.ineq_fn = inequalities or (lambda x: np.zeros(0))
        self.eq_jacobian = eq_jacobian
        self.ineq_jacobian = ineq_jacobian
        midpoint = 0.5 * (np.clip(self.lower, -1e3, 1e3) + np.clip(self.upper, -1e3, 1e3))
        self.n_eq = int(np.asarray(self.eq_fn(midpoint)).size)
        self.n_ineq = int(np.asarray(self.ineq_fn(midpoint)).size)
        self.complementarity_mask = (np.zeros(self.n_ineq, dtype=bool) if complementarity_mask is None
                                     else np.asarray(complementarity_mask, dtype=bool))

    def evaluate(self, x: np.ndarray) -> _CallbackEvaluation:
        return _CallbackEvaluation(self, np.asarray(x, dtype=float))


def _violation(ev, relax: np.ndarray) -> float:
    eq = float(np.max(np.abs(ev.eq), initial=0.0))
    ineq = float(np.max(ev.ineq - relax, initial=0.0))
    return max(eq, ineq, 0.0)


def _check_finite(ev) -> None:
    if not (np.isfinite(ev.objective) and np.all(np.isfinite(ev.eq)) and np.all(np.isfinite(ev.ineq))):
        raise SolverError("non-finite objective or residual at the projected start point")


# ============================================================================
# Solvers
# ============================================================================

class NlpSolver(Protocol):
    def solve(self, problem: NlpProblem, x0: np.ndarray, cfg: SolverConfig) -> Tuple[np.ndarray, SolveReport]:
        ...


class AugmentedLagrangianSolver:
    """Outer multiplier/penalty loop around L-BFGS-B subproblems.

    Inequalities enter as (max(0, nu + mu g)^2 - nu^2) / 2mu, equalities as
    lam h + mu/2 h^2. Complementarity rows are relaxed to g <= eps_k while
    the schedule runs; an outer iterate is accepted only when its true
    maximum violation does not exceed the last accepted one, so the
    accepted violations in the trace never increase.
    """

    def solve(self, problem: NlpProblem, x0: np.ndarray, cfg: SolverConfig,
              start_index: int = 0) -> Tuple[np.ndarray, SolveReport]:
        started = time.time()
        x = np.clip(np.asarray(x0, dtype=float), problem.lower, problem.upper)
        ev = problem.evaluate(x)
        _check_finite(ev)
        mask = np.asarray(problem.complementarity_mask, dtype=bool)
        relaxed = bool(mask.any())
        lam = np.zeros(problem.n_eq)
        nu = np.zeros(problem.n_ineq)
        mu = cfg.penalty_init
        stage = 0 if relaxed else len(cfg.relax_schedule) - 1
        best_violation = _violation(ev, 0.0)
        best_objective = ev.objective
        trace: List[TraceRecord] = [TraceRecord(0, 'start', mu, cfg.relax_schedule[stage], best_violation,
                                                best_objective, True, time.time())]
        bounds = list(zip(problem.lower, problem.upper))
        status, message = 'iteration_limit', "outer iteration limit reached"
        iterations = 0

        for k in range(1, cfg.max_outer_iters + 1):
            iterations = k
            eps = cfg.relax_schedule[stage]
            relax = eps * mask

            def merit(z, lam=lam, nu=nu, mu=mu, relax=relax):
                e = problem.evaluate(z)
                h = e.eq
                shifted = np.maximum(0.0, nu + mu * (e.ineq - relax))
                value = (e.objective + lam @ h + 0.5 * mu * (h @ h)
                         + (shifted @ shifted - nu @ nu) / (2.0 * mu))
                return value, e.gradient(1.0, lam + mu * h, shifted)

            result = minimize(merit, x, jac=True, method='L-BFGS-B', bounds=bounds,
                              options={'maxiter': cfg.max_inner_iters, 'gtol': 0.1 * cfg.optimality_tol,
                                       'ftol': 1e-15})
            z = np.clip(result.x, problem.lower, problem.upper)
            e = problem.evaluate(z)
            violation = _violation(e, 0.0)
            stage_violation = _violation(e, relax)
            accepted = bool(np.isfinite(e.objective)) and violation <= best_violation
            projected = z - np.clip(z - result.jac, problem.lower, problem.upper)
            stationary = float(np.max(np.abs(projected), initial=0.0)) <= cfg.optimality_tol
            trace.append(TraceRecord(k, 'outer', mu, eps, violation, e.objective, accepted, time.time()))
            logger.debug("outer %d: mu=%.3g eps=%.1e violation=%.3e objective=%.6g inner=%d %s",
                         k, mu, eps, violation, e.objective, result.nit, 'accepted' if accepted else 'rejected')

            if accepted:
                progress = violation <= 0.25 * best_violation or violation <= cfg.constraint_tol
                x, best_violation, best_objective = z, violation, e.objective
                lam = lam + mu * e.eq
                nu = np.maximum(0.0, nu + mu * (e.ineq - relax))
                if not progress:
                    mu *= cfg.penalty_growth
            else:
                mu *= cfg.penalty_growth

            if stage_violation <= cfg.constraint_tol and stage < len(cfg.relax_schedule) - 1:
                stage += 1
                continue
            final_stage = stage == len(cfg.relax_schedule) - 1
            if final_stage and accepted and violation <= cfg.constraint_tol and stationary:
                status, message = 'optimal', "converged"
                break
            if mu > cfg.penalty_max:
                status, message = 'infeasible', f"penalty exceeded {cfg.penalty_max:.1e}"
                break

        if status != 'optimal' and best_violation <= cfg.constraint_tol:
            status = 'feasible'
        if status == 'iteration_limit':
            logger.warning("start %d stopped at the iteration limit (violation %.3e)", start_index, best_violation)
        report = SolveReport(status, float(best_objective), float(best_violation), iterations,
                             time.time() - started, tuple(trace), start_index, message)
        return x, report


class TrustConstrSolver:
    """scipy trust-constr behind the `NlpSolver` protocol.

    Constraint Jacobians are assembled row by row from vector-Jacobian
    products, so this adapter suits small programs only.
    """

    def solve(self, problem: NlpProblem, x0: np.ndarray, cfg: SolverConfig,
              start_index: int = 0) -> Tuple[np.ndarray, SolveReport]:
        started = time.time()
        x0 = np.clip(np.asarray(x0, dtype=float), problem.lower, problem.upper)
        _check_finite(problem.evaluate(x0))
        cache: Dict[bytes, object] = {}

        def at(z):
            key = np.asarray(z, dtype=float).tobytes()
            if key not in cache:
                cache.clear()
                cache[key] = problem.evaluate(np.asarray(z, dtype=float))
            return cache[key]

        def jacobian(z, kind, size):
            e = at(z)
            rows = np.zeros((size, z.size))
            for i in range(size):
                weights = np.zeros(size)
                weights[i] = 1.0
                rows[i] = e.gradient(0.0, weights, None) if kind == 'eq' else e.gradient(0.0, None, weights)
            return rows

        constraints = []
        if problem.n_eq:
            constraints.append(NonlinearConstraint(lambda z: at(z).eq, 0.0, 0.0,
                                                   jac=lambda z: jacobian(z, 'eq', problem.n_eq), hess=BFGS()))
        if problem.n_ineq:
            constraints.append(NonlinearConstraint(lambda z: at(z).ineq, -np.inf, 0.0,
                                                   jac=lambda z: jacobian(z, 'ineq', problem.n_ineq), hess=BFGS()))
        result = minimize(lambda z: at(z).objective, x0, jac=lambda z: at(z).gradient(), method='trust-constr',
                          bounds=Bounds(problem.lower, problem.upper), constraints=constraints, hess=BFGS(),
                          options={'maxiter': cfg.max_outer_iters * cfg.max_inner_iters,
                                   'gtol': cfg.optimality_tol, 'xtol': 1e-12})
        x = np.clip(result.x, problem.lower, problem.upper)
        e = problem.evaluate(x)
        violation = _violation(e, 0.0)
        if violation <= cfg.constraint_tol:
            status = 'optimal' if result.status in (1, 2) else 'feasible'
        else:
            status = 'iteration_limit' if result.status == 0 else 'infeasible'
        record = TraceRecord(result.nit, 'trust-constr', 0.0, 0.0, violation, e.objective, True, time.time())
        report = SolveReport(status, float(e.objective), float(violation), int(result.nit),
                             time.time() - started, (record,), start_index, str(result.message))
        return x, report


def make_solver(cfg: SolverConfig) -> NlpSolver:
    return TrustConstrSolver() if cfg.method == 'trust-constr' else AugmentedLagrangianSolver()


def solve(prog: TranscribedProgram, init: DecisionVector, cfg: SolverConfig) -> Tuple[DecisionVector, SolveReport]:
    """Single solve from `init` (projected onto the bounds first)."""
    x, report = make_solver(cfg).solve(prog, prog.pack(init), cfg)
    return prog.unpack(x), report


# ============================================================================
# Initial guess
# ============================================================================

def _nearest_neighbour_tour(start: np.ndarray, points: np.ndarray, rng: Optional[np.random.Generator]) -> List[int]:
    remaining = list(range(len(points)))
    order, here = [], start
    while remaining:
        dists = [np.linalg.norm(points[i] - here) for i in remaining]
        ranked = [remaining[i] for i in np.argsort(dists, kind='stable')]
        pick = ranked[0]
        if rng is not None and len(ranked) > 1 and rng.random() < 0.3:
            pick = ranked[1]
        order.append(pick)
        remaining.remove(pick)
        here = points[pick]
    return order


def _heading_for(step: np.ndarray, dt: float, v_max: float) -> Tuple[float, float, float]:
    """(v, theta, phi) whose noise-free displacement best matches `step`."""
    def residual(p):
        v, theta, phi = p
        move = v * dt * np.array([np.cos(phi) * np.sin(theta), np.sin(phi) * np.cos(theta), np.sin(theta)])
        return move - step

    length = float(np.linalg.norm(step))
    guess_theta = float(np.arcsin(np.clip(step[2] / length, -1.0, 1.0))) if length > 0 else 0.0
    guess = [min(length / dt, v_max), np.clip(guess_theta, -1.5, 1.5), float(np.arctan2(step[1], step[0]))]
    fit = least_squares(residual, guess, bounds=([0.0, -np.pi / 2, -2 * np.pi], [v_max, np.pi / 2, 2 * np.pi]))
    return tuple(float(p) for p in fit.x)


def initial_guess(spec: MissionSpec, rng: Optional[np.random.Generator] = None) -> DecisionVector:
    """Nearest-neighbour tour, pursued with inverted headings, plus seeded selectors.

    Passing `rng` perturbs the tour order and the controls for multistarts.
    """
    T, N, M, dt = spec.horizon, spec.N, spec.M, spec.dt
    layout = layout_for(spec)
    bounds = spec.control_bounds
    centres = np.array([wp.centroid for wp in spec.waypoints]).reshape(N, 3)
    goal = np.asarray(spec.goal_centroid, dtype=float)
    state = spec.initial_belief.mean.copy()
    order = _nearest_neighbour_tour(state[:3], centres, rng)
    stops = [centres[i] for i in order] + [goal]
    path = np.sum([np.linalg.norm(b - a) for a, b in zip([state[:3]] + stops[:-1], stops)])
    cruise = float(np.clip(path / max(T * dt, dt), 0.2 * bounds.v_max, bounds.v_max))
    reach = 0.25 * min((wp.edge_length for wp in spec.waypoints), default=1.0)

    controls = np.zeros((T, CONTROL_DIM))
    positions = np.zeros((T, 3))
    arrival = np.full(N, -1)
    closest = np.full(N, np.inf)
    closest_step = np.zeros(N, dtype=int)
    leg = 0
    for t in range(T):
        target = stops[leg]
        offset = target - state[:3]
        distance = float(np.linalg.norm(offset))
        step = offset if distance <= cruise * dt else offset * (cruise * dt / distance)
        if distance > 1e-9:
            speed, theta_ref, phi_ref = _heading_for(step, dt, bounds.v_max)
        else:
            speed, theta_ref, phi_ref = 0.0, state[3], state[4]
        d_theta = theta_ref - state[3]
        d_phi = (phi_ref - state[4] + np.pi) % (2 * np.pi) - np.pi
        rates = np.clip(np.array([d_theta, d_phi]) / dt, -bounds.omega_max, bounds.omega_max)
        align = max(0.0, np.cos(d_theta) * np.cos(d_phi))
        controls[t] = [np.clip(speed * align, -bounds.v_max, bounds.v_max), rates[0], rates[1]]
        if rng is not None:
            controls[t] += rng.normal(0.0, 0.05, CONTROL_DIM) * bounds.upper()
            controls[t] = np.clip(controls[t], bounds.lower(), bounds.upper())
        state = wrap_angles(transition(state, controls[t], dt))
        positions[t] = state[:3]
        for n in range(N):
            gap = np.linalg.norm(state[:3] - centres[n])
            if gap < closest[n]:
                closest[n], closest_step[n] = gap, t
        if leg < N and np.linalg.norm(state[:3] - stops[leg]) <= reach:
            arrival[order[leg]] = t
            leg += 1
    arrival = np.where(arrival >= 0, arrival, closest_step)

    steps = np.arange(T)[:, None]
    w3 = np.exp(-0.5 * (steps - arrival[None, :]) ** 2)
    w3 /= w3.sum(axis=0, keepdims=True)

    o = np.zeros(layout.shapes['o'])
    column = 0
    for poly in spec.obstacles:
        separation = positions @ poly.normals.T - poly.offsets
        o[np.arange(T), column + np.argmax(separation, axis=1)] = 1.0
        column += poly.face_count

    P = spec.targets_per_facet
    dec = DecisionVector(
        u=controls,
        w1=np.full((T, N, CUBE_FACES), 0.5),
        w2=np.full((T, N), 0.5 * CUBE_FACES - CUBE_FACES),
        w3=w3,
        g1=np.full((T, N, P, M, FOV_FACES), 0.5),
        g2=np.full((T, N, P, M), 0.5 * FOV_FACES - FOV_FACES),
        s_fov=np.full((T, M), 1.0 / M),
        o=o,
    )
    logger.debug("initial guess: tour %s, arrivals %s, cruise %.2f", order, arrival.tolist(), cruise)
    return dec


# ============================================================================
# Multistart and plan extraction
# ============================================================================

def _rank(report: SolveReport) -> Tuple:
    key = report.objective if report.succeeded else report.max_violation
    return STATUSES.index(report.status), key, report.start_index


def solve_mission(spec: MissionSpec, cfg: SolverConfig,
                  program: Optional[TranscribedProgram] = None) -> Tuple[DecisionVector, SolveReport]:
    """Multistart solve; start i uses seed + i, start 0 the unperturbed tour."""
    program = program or transcribe(spec)
    solver = make_solver(cfg)

    def run(index: int):
        rng = None if index == 0 else np.random.default_rng(cfg.seed + index)
        x0 = program.pack(initial_guess(spec, rng))
        return solver.solve(program, x0, cfg, start_index=index)

    if cfg.workers > 1 and cfg.multistarts > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(run, range(cfg.multistarts)))
    else:
        outcomes = [run(i) for i in range(cfg.multistarts)]
    for _, report in outcomes:
        logger.info("start %d: %s", report.start_index, report.summary())
    x, report = min(outcomes, key=lambda item: _rank(item[1]))
    return program.unpack(x), report


@dataclass(frozen=True, eq=False)
class PlanResult:
    controls: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    fov_schedule: np.ndarray
    visit_steps: np.ndarray
    covered: np.ndarray
    visits_ok: np.ndarray
    obstacle_faces: np.ndarray
    violations: Dict[str, float]
    report: Optional[SolveReport] = None

    @property
    def horizon(self) -> int:
        return len(self.controls)


def extract_plan(spec: MissionSpec, dec: DecisionVector, tol: float = SolverConfig.constraint_tol,
                 report: Optional[SolveReport] = None) -> PlanResult:
    """Recompute beliefs, schedules and coverage flags for a feasible decision vector.

    FOV schedule entry t is argmax_m s_fov for belief t+1 and visit step n is
    the belief index 1 + argmax_t w3; ties go to the smaller index.
    """
    violations = audit_violations(spec, dec)
    worst = max(violations.values(), default=0.0)
    if worst > tol:
        failing = {k: v for k, v in violations.items() if v > tol}
        raise InfeasiblePlanError(f"plan violates {len(failing)} constraint groups (max {worst:.3e})", failing)
    beliefs = belief_trajectory(spec, dec.controls())
    inside, covered = certificate(spec, beliefs, dec, tol)
    return PlanResult(
        controls=np.asarray(dec.u, dtype=float).copy(),
        means=np.array([b.mean for b in beliefs]),
        covariances=np.array([b.covariance for b in beliefs]),
        fov_schedule=fov_schedule(dec),
        visit_steps=visit_steps(dec),
        covered=covered,
        visits_ok=inside,
        obstacle_faces=obstacle_face_schedule(spec, dec),
        violations=violations,
        report=report,
    )


def with_overrides(cfg: SolverConfig, **overrides) -> SolverConfig:
    """`dataclasses.replace` ignoring None values."""
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})

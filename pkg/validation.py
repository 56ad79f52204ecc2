"""Validation - Monte-Carlo rollouts of the true stochastic dynamics under a plan.

Rollouts are generated in fixed-size chunks; chunk c draws from the stream
SeedSequence([seed, c]), so a batch depends only on (seed, S) and not on
how many workers produced it.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
from scipy.stats import norm

from dynamics import STATE_DIM, CONTROL_DIM, rollout_batch
from errors import ValidationError
from geometry import CUBE_FACES
from program import MissionSpec
from solver import PlanResult

logger = logging.getLogger(__name__)

CHUNK = 1024
CONFIDENCE = 0.99


def binomial_half_width(rate, samples: int, confidence: float = CONFIDENCE):
    """Normal-approximation half-width of a binomial frequency."""
    z = norm.ppf(0.5 + 0.5 * confidence)
    rate = np.asarray(rate, dtype=float)
    return z * np.sqrt(rate * (1.0 - rate) / samples)


def _sqrt_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigh; tolerates singular covariances."""
    values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
    return vectors * np.sqrt(np.clip(values, 0.0, None))


@dataclass(frozen=True, eq=False)
class RolloutBatch:
    seed: int
    trajectories: np.ndarray

    @property
    def sample_count(self) -> int:
        return self.trajectories.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.trajectories[..., :3]


def sample_rollouts(spec: MissionSpec, plan: PlanResult, S: int, seed: int, workers: int = 1) -> RolloutBatch:
    """S open-loop rollouts with x0 ~ N(x_hat, P_hat) and i.i.d. control noise."""
    if S < 1:
        raise ValidationError(f"sample count must be at least 1, got {S}")
    controls = np.asarray(plan.controls, dtype=float)
    T = controls.shape[0]
    x_root = _sqrt_factor(spec.initial_belief.covariance)
    q_root = _sqrt_factor(spec.disturbance.covariance)

    def chunk(index: int) -> np.ndarray:
        size = min(CHUNK, S - index * CHUNK)
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        x0 = spec.initial_belief.mean + rng.standard_normal((size, STATE_DIM)) @ x_root.T
        noise = spec.disturbance.mean + rng.standard_normal((size, T, CONTROL_DIM)) @ q_root.T
        return rollout_batch(x0, controls, noise, spec.dt)

    count = -(-S // CHUNK)
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk, range(count)))
    else:
        parts = [chunk(i) for i in range(count)]
    logger.debug("sampled %d rollouts in %d chunks (seed %d)", S, count, seed)
    return RolloutBatch(seed, np.concatenate(parts, axis=0))


def sample_posterior(plan: PlanResult, S: int, seed: int) -> np.ndarray:
    """(S, T+1, 3) positions drawn independently per step from N(mean_t, P^p_t)."""
    if S < 1:
        raise ValidationError(f"sample count must be at least 1, got {S}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    steps = plan.means.shape[0]
    out = np.empty((S, steps, 3))
    for t in range(steps):
        root = _sqrt_factor(plan.covariances[t, :3, :3])
        out[:, t] = plan.means[t, :3] + rng.standard_normal((S, 3)) @ root.T
    return out


@dataclass(frozen=True, eq=False)
class ValidationReport:
    seed: int
    sample_count: int
    delta_w: float
    delta_o: float
    visit_steps: np.ndarray
    face_rates: np.ndarray
    joint_miss_rates: np.ndarray
    collision_rates: np.ndarray
    margin_rates: np.ndarray
    mean_divergence: np.ndarray
    cov_divergence: np.ndarray
    coverage_rates: Optional[np.ndarray] = None
    full_coverage_rate: Optional[float] = None

    @property
    def waypoint_width(self) -> float:
        """Half-width of a face rate whose true value sits at delta_w."""
        return float(binomial_half_width(self.delta_w, self.sample_count))

    @property
    def collision_width(self) -> float:
        return float(binomial_half_width(self.delta_o, self.sample_count))

    @property
    def waypoint_ok(self) -> bool:
        return bool(np.all(self.face_rates <= self.delta_w + self.waypoint_width))

    @property
    def collision_ok(self) -> bool:
        return bool(np.all(self.collision_rates <= self.delta_o + self.collision_width))

    @property
    def passed(self) -> bool:
        return self.waypoint_ok and self.collision_ok

    def to_text(self, mission_hash: str) -> str:
        """Deterministic text rendering; floats use repr."""
        lines = [f"# mission_hash = {mission_hash}",
                 f"# seed = {self.seed}",
                 f"# samples = {self.sample_count}",
                 f"# delta_w = {self.delta_w!r}",
                 f"# delta_o = {self.delta_o!r}",
                 f"# passed = {self.passed}"]
        if self.full_coverage_rate is not None:
            lines.append(f"# full_coverage_rate = {self.full_coverage_rate!r}")
        for n, step in enumerate(self.visit_steps):
            for l, rate in enumerate(self.face_rates[n]):
                lines.append(f"face,{n},{l},{int(step)},{float(rate)!r},{self.waypoint_width!r}")
            lines.append(f"joint_miss,{n},{float(self.joint_miss_rates[n])!r}")
            if self.coverage_rates is not None:
                lines.append(f"coverage,{n},{float(self.coverage_rates[n])!r}")
        for i in range(self.collision_rates.shape[0]):
            for t in range(self.collision_rates.shape[1]):
                lines.append(f"collision,{i},{t + 1},{float(self.collision_rates[i, t])!r},"
                             f"{self.collision_width!r},{float(self.margin_rates[i, t])!r}")
        for t, (dm, dc) in enumerate(zip(self.mean_divergence, self.cov_divergence)):
            lines.append(f"moments,{t},{float(dm)!r},{float(dc)!r}")
        return "\n".join(lines) + "\n"


def _check_plan(spec: MissionSpec, plan: PlanResult, batch: RolloutBatch) -> None:
    if batch.sample_count < 1:
        raise ValidationError("empty rollout batch")
    steps = np.asarray(plan.visit_steps) if plan.visit_steps is not None else None
    if steps is None or steps.shape != (spec.N,):
        raise ValidationError("plan lacks visit times")
    if np.any(steps < 1) or np.any(steps > plan.horizon):
        raise ValidationError(f"visit steps out of range 1..{plan.horizon}: {steps.tolist()}")
    if batch.trajectories.shape[1] != plan.horizon + 1:
        raise ValidationError("batch horizon does not match the plan")


def check_chance_constraints(spec: MissionSpec, plan: PlanResult, batch: RolloutBatch) -> ValidationReport:
    """Empirical waypoint-face and collision frequencies with moment divergences."""
    _check_plan(spec, plan, batch)
    positions = batch.positions
    S, T = batch.sample_count, plan.horizon
    face_rates = np.zeros((spec.N, CUBE_FACES))
    joint = np.zeros(spec.N)
    for n, wp in enumerate(spec.waypoints):
        at_visit = positions[:, plan.visit_steps[n]]
        outside = at_visit @ wp.cube.normals.T > wp.cube.offsets
        face_rates[n] = outside.mean(axis=0)
        joint[n] = outside.any(axis=1).mean()

    collision = np.zeros((len(spec.obstacles), T))
    margin = np.zeros((len(spec.obstacles), T))
    for i, poly in enumerate(spec.obstacles):
        for t in range(1, T + 1):
            collision[i, t - 1] = poly.contains(positions[:, t]).mean()
            j = plan.obstacle_faces[t - 1, i]
            margin[i, t - 1] = np.mean(positions[:, t] @ poly.normals[j] <= poly.offsets[j])

    mean_div = np.zeros(T + 1)
    cov_div = np.zeros(T + 1)
    for t in range(T + 1):
        emp_mean = positions[:, t].mean(axis=0)
        mean_div[t] = np.linalg.norm(emp_mean - plan.means[t, :3])
        if S > 1:
            emp_cov = np.cov(positions[:, t], rowvar=False)
            ut_cov = plan.covariances[t, :3, :3]
            scale = np.linalg.norm(ut_cov)
            cov_div[t] = np.linalg.norm(emp_cov - ut_cov) / (scale if scale > 0.0 else 1.0)
    report = ValidationReport(batch.seed, S, spec.delta_w, spec.delta_o, np.asarray(plan.visit_steps),
                              face_rates, joint, collision, margin, mean_div, cov_div)
    logger.info("chance check: max face rate %.4f (delta_w %.2f), max collision rate %.4f (delta_o %.2f)",
                float(np.max(face_rates, initial=0.0)), spec.delta_w,
                float(np.max(collision, initial=0.0)), spec.delta_o)
    return report


def _covered(spec: MissionSpec, plan: PlanResult, batch: RolloutBatch, n: int, tol: float) -> np.ndarray:
    """(S,) flags: facet n's targets inside the FOV scheduled at its visit, at each sample's position."""
    step = int(plan.visit_steps[n])
    state = spec.fov_states[int(plan.fov_schedule[step - 1])]
    shift = batch.positions[:, step] @ state.normals.T
    inside = np.ones(batch.sample_count, dtype=bool)
    for p in spec.facets[n].targets(spec.cover_vertices):
        inside &= np.all(state.normals @ p - state.offsets - shift <= tol, axis=1)
    return inside


def check_coverage(spec: MissionSpec, plan: PlanResult, batch: RolloutBatch, tol: float = 1e-9) -> np.ndarray:
    """Per-facet coverage frequencies."""
    _check_plan(spec, plan, batch)
    return np.array([_covered(spec, plan, batch, n, tol).mean() for n in range(spec.N)])


def _full_coverage(spec: MissionSpec, plan: PlanResult, batch: RolloutBatch, tol: float = 1e-9) -> float:
    covered = np.ones(batch.sample_count, dtype=bool)
    for n in range(spec.N):
        covered &= _covered(spec, plan, batch, n, tol)
    return float(covered.mean())


def validate_plan(spec: MissionSpec, plan: PlanResult, S: int, seed: int, workers: int = 1) -> ValidationReport:
    """Sample, check chance constraints and coverage, and merge into one report."""
    batch = sample_rollouts(spec, plan, S, seed, workers)
    report = check_chance_constraints(spec, plan, batch)
    return replace(report, coverage_rates=check_coverage(spec, plan, batch),
                   full_coverage_rate=_full_coverage(spec, plan, batch))


def summary_lines(report: ValidationReport) -> List[str]:
    lines = [f"samples: {report.sample_count}  seed: {report.seed}",
             f"max waypoint face rate: {float(np.max(report.face_rates, initial=0.0)):.4f} "
             f"(delta_w {report.delta_w})",
             f"max joint miss rate: {float(np.max(report.joint_miss_rates, initial=0.0)):.4f}",
             f"max collision rate: {float(np.max(report.collision_rates, initial=0.0)):.4f} "
             f"(delta_o {report.delta_o})"]
    if report.coverage_rates is not None:
        lines.append(f"coverage rates: {', '.join(f'{r:.3f}' for r in report.coverage_rates)}")
    if report.sample_count < 30:
        lines.append("note: few samples, half-widths dominate the check")
    lines.append("PASS" if report.passed else "FAIL")
    return lines

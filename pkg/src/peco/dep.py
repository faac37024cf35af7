"""Data-embedded programs: build, check feasibility, solve.

A DEP keeps one copy of the constraint block ``g(x, xi) <= 0`` per distinct
embedded data point. Two deterministic backends are provided:

``builtin-penalty``
    quadratic-penalty continuation with projected gradient descent;
``grid-oracle``
    exhaustive scan of a regular grid over the bounds box (n <= 2) followed
    by one finer pass around the incumbent.

Both are pure functions of (problem, embedded points, config), so repeated
solves return bit-identical results.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import DataSet, ScenarioSet, underlying_set
from .dsl import ProblemSpec, _Env
from .errors import (
    ConfigError,
    DimensionError,
    EmptyData,
    GridOracleDimension,
    Infeasible,
    MaxIterations,
)

PENALTY = "builtin-penalty"
GRID = "grid-oracle"
EXTERNAL = "external"
SOLVERS = (PENALTY, GRID)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"


@dataclass(frozen=True)
class SolverConfig:
    solver_id: str = PENALTY
    start: Optional[tuple[float, ...]] = None
    feas_tol: float = 1e-8
    sol_tol: float = 1e-6
    act_tol: float = 1e-6
    # penalty continuation
    mu0: float = 1.0
    mu_factor: float = 10.0
    max_rounds: int = 12
    max_inner: int = 5000
    step0: float = 1.0
    shrink: float = 0.5
    armijo: float = 0.5
    max_backtracks: int = 80
    abs_smoothing: Optional[float] = None
    # grid oracle
    grid_n: int = 2001
    refine_factor: int = 10
    # half-width of the refinement window, in coarse steps
    refine_window: int = 5

    def __post_init__(self):
        if self.solver_id not in SOLVERS:
            raise ConfigError(
                f"unknown solver {self.solver_id!r}; built-in backends are {', '.join(SOLVERS)}"
            )
        for name in ("feas_tol", "sol_tol", "act_tol", "mu0", "step0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.shrink < 1:
            raise ConfigError("shrink must lie in (0, 1)")
        if self.grid_n < 2:
            raise ConfigError("grid_n must be at least 2")
        if self.refine_factor < 1 or self.refine_window < 1:
            raise ConfigError("refine_factor and refine_window must be at least 1")
        if self.start is not None:
            object.__setattr__(self, "start", tuple(float(v) for v in self.start))

    def fingerprint(self, spec: ProblemSpec | None = None) -> dict:
        """The fields that must stay fixed for solutions to be comparable."""
        fp = asdict(self)
        if fp["start"] is None and spec is not None:
            fp["start"] = [float(v) for v in spec.start]
        elif fp["start"] is not None:
            fp["start"] = list(fp["start"])
        return fp

    @classmethod
    def from_dict(cls, obj: dict) -> "SolverConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown solver settings: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True, eq=False)
class DepInstance:
    spec: ProblemSpec
    embedded: ScenarioSet

    @property
    def points(self) -> np.ndarray:
        return self.embedded.values

    @property
    def constraint_count(self) -> int:
        return self.spec.m * len(self.embedded)

    def constraint_pairs(self) -> list[tuple[int, int]]:
        """(constraint index, scenario index) in constraint-major order."""
        return [(k, s) for k in range(self.spec.m) for s in range(len(self.embedded))]

    def constraint_values(self, x) -> np.ndarray:
        """Matrix ``G[k, s] = g_k(x, xi_s)``; strict domain checking."""
        return _constraint_matrix(self.spec, self.points, x, strict=True)


def _empty_scenarios(u: int) -> ScenarioSet:
    return ScenarioSet(np.empty((0, u)), np.empty(0, dtype=int), first_index=np.empty(0, dtype=int))


def build_dep(spec: ProblemSpec, emb: DataSet | ScenarioSet, allow_empty: bool = False) -> DepInstance:
    """Embed the distinct points of ``emb`` into ``spec``."""
    if emb.dimension != spec.u:
        raise DimensionError(f"embedded points have dimension {emb.dimension}, problem expects u={spec.u}")
    if len(emb) == 0:
        if not allow_empty:
            raise EmptyData("cannot build a DEP from an empty embedded set")
        return DepInstance(spec, _empty_scenarios(spec.u))
    if isinstance(emb, DataSet):
        emb = underlying_set(emb)
    return DepInstance(spec, emb)


def _constraint_matrix(spec: ProblemSpec, points: np.ndarray, x, strict=True, abs_eps=None) -> np.ndarray:
    S = points.shape[0]
    env = _Env(tuple(float(v) for v in x), tuple(points[:, j] for j in range(spec.u)))
    out = np.empty((spec.m, S))
    for k, g in enumerate(spec.constraints):
        out[k] = np.broadcast_to(g.value_fn(strict, abs_eps)(env), (S,))
    return out


def is_feasible(inst: DepInstance, x, tol: float = 1e-8) -> bool:
    """Every embedded constraint evaluates to at most ``tol`` (inclusive)."""
    if len(inst.embedded) == 0:
        return True
    return bool(np.all(inst.constraint_values(x) <= tol))


@dataclass(frozen=True)
class Solution:
    x_star: tuple[float, ...]
    objective_value: float
    status: str
    active_data_points: tuple[int, ...]
    solver_id: str
    start: tuple[float, ...]
    iterations: int
    max_violation: float = 0.0
    config: dict = field(default_factory=dict, compare=False)

    def raise_for_status(self) -> "Solution":
        if self.status == INFEASIBLE:
            raise Infeasible(f"{self.solver_id}: no feasible point (max violation {self.max_violation:.3g})")
        if self.status == MAX_ITERATIONS:
            raise MaxIterations(
                f"{self.solver_id}: stopped with max violation {self.max_violation:.3g}"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "x_star": list(self.x_star),
            "objective_value": self.objective_value,
            "status": self.status,
            "active_data_points": list(self.active_data_points),
            "solver_id": self.solver_id,
            "start": list(self.start),
            "iterations": self.iterations,
            "max_violation": self.max_violation,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def solutions_equal(a: Solution, b: Solution, sol_tol: float = 1e-6) -> bool:
    if len(a.x_star) != len(b.x_star):
        raise DimensionError("solutions have different dimensions")
    return bool(np.max(np.abs(np.subtract(a.x_star, b.x_star)), initial=0.0) <= sol_tol)


# solver backends

class _Backend:
    """Solver bound to one problem and config; solves DEPs over point subsets."""

    def __init__(self, spec: ProblemSpec, cfg: SolverConfig):
        self.spec = spec
        self.cfg = cfg
        start = np.asarray(cfg.start if cfg.start is not None else spec.start, dtype=float)
        if start.shape != (spec.n,):
            raise DimensionError("start point has the wrong dimension")
        lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
        if np.any(start < lo) or np.any(start > hi):
            raise ConfigError("start point lies outside the bounds")
        self.start = start
        if cfg.abs_smoothing is None and any(g.has_abs() for g in spec.constraints):
            raise ConfigError("constraints use abs(); set abs_smoothing to solve them")
        self.abs_eps = cfg.abs_smoothing
        self.fingerprint = cfg.fingerprint(spec)

    def objective(self, x) -> float:
        return float(self.spec.objective.value_fn(True, self.abs_eps)(_Env(tuple(x), ())))

    def _finish(self, points, x, iterations, status=None) -> Solution:
        x = np.asarray(x, dtype=float)
        if points.shape[0]:
            G = _constraint_matrix(self.spec, points, x, strict=True, abs_eps=self.abs_eps)
            viol = float(max(0.0, G.max()))
            active = tuple(int(s) for s in np.flatnonzero(np.any(np.abs(G) <= self.cfg.act_tol, axis=0)))
        else:
            viol, active = 0.0, ()
        if status is None:
            if viol <= self.cfg.feas_tol:
                status = OPTIMAL
            elif viol > math.sqrt(self.cfg.feas_tol):
                status = INFEASIBLE
            else:
                status = MAX_ITERATIONS
        return Solution(
            tuple(float(v) for v in x),
            self.objective(x),
            status,
            active,
            self.cfg.solver_id,
            tuple(float(v) for v in self.start),
            int(iterations),
            viol,
            self.fingerprint,
        )

    def solve_points(self, points: np.ndarray) -> Solution:
        raise NotImplementedError


class PenaltyBackend(_Backend):
    """min f + mu * sum(max(0, g)^2) by projected gradient, mu increased tenfold per round."""

    def __init__(self, spec, cfg):
        super().__init__(spec, cfg)
        self.lo = spec.bounds[:, 0].copy()
        self.hi = spec.bounds[:, 1].copy()
        self.f_dual = spec.objective.dual_fn(self.abs_eps)
        self.g_duals = [g.dual_fn(self.abs_eps) for g in spec.constraints]
        self.g_vals = [g.value_fn(True, self.abs_eps) for g in spec.constraints]
        self.f_val = spec.objective.value_fn(True, self.abs_eps)

    def _phi(self, x, xi, mu) -> float:
        env = _Env(tuple(x.tolist()), xi)
        total = float(self.f_val(env))
        pen = 0.0
        for g in self.g_vals:
            v = np.maximum(g(env), 0.0)
            pen += float(np.sum(v * v))
        return total + mu * pen

    def _phi_grad(self, x, xi, mu):
        n = self.spec.n
        env = _Env(tuple(x.tolist()), xi)
        fv, fg = self.f_dual(env)
        grad = np.array([0.0 if gi is None else float(gi) for gi in fg])
        pen = 0.0
        for g in self.g_duals:
            gv, gg = g(env)
            v = np.maximum(gv, 0.0)
            pen += float(np.sum(v * v))
            for j in range(n):
                if gg[j] is not None:
                    grad[j] += 2.0 * mu * float(np.sum(v * gg[j]))
        return float(fv) + mu * pen, grad

    def _max_violation(self, x, xi, count) -> float:
        if count == 0:
            return 0.0
        env = _Env(tuple(x.tolist()), xi)
        return max(0.0, max(float(np.max(g(env))) for g in self.g_vals))

    def solve_points(self, points: np.ndarray) -> Solution:
        cfg = self.cfg
        xi = tuple(np.ascontiguousarray(points[:, j]) for j in range(self.spec.u))
        has_constraints = points.shape[0] > 0
        x = self.start.copy()
        mu = cfg.mu0
        iterations = 0
        hit_cap = False
        for _ in range(cfg.max_rounds):
            hit_cap = False
            for inner in range(cfg.max_inner):
                iterations += 1
                phi, grad = self._phi_grad(x, xi, mu)
                t = cfg.step0
                accepted = False
                for _ in range(cfg.max_backtracks):
                    trial = np.clip(x - t * grad, self.lo, self.hi)
                    step = trial - x
                    if not np.any(step):
                        break
                    phi_trial = self._phi(trial, xi, mu)
                    if phi_trial <= phi + cfg.armijo * float(grad @ step):
                        # equality within rounding means we are at a fixed point
                        accepted = phi_trial < phi
                        break
                    t *= cfg.shrink
                if not accepted:
                    break
                x = trial
                if np.max(np.abs(step)) <= 1e-13 * (1.0 + np.max(np.abs(x))):
                    break
            else:
                hit_cap = True
            if not has_constraints or self._max_violation(x, xi, points.shape[0]) <= cfg.feas_tol:
                break
            mu *= cfg.mu_factor
        status = None
        if hit_cap and self._max_violation(x, xi, points.shape[0]) > cfg.feas_tol:
            status = MAX_ITERATIONS
        sol = self._finish(points, x, iterations)
        if status is not None and sol.status == OPTIMAL:
            sol = replace(sol, status=status)
        return sol


class GridBackend(_Backend):
    """Exhaustive grid scan; per-point feasibility masks are cached across solves."""

    def __init__(self, spec, cfg):
        if spec.n > 2:
            raise GridOracleDimension(f"grid oracle handles n <= 2, problem has n={spec.n}")
        super().__init__(spec, cfg)
        self.axes = [np.linspace(lo, hi, cfg.grid_n) for lo, hi in spec.bounds]
        self.steps = [(hi - lo) / (cfg.grid_n - 1) for lo, hi in spec.bounds]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.mesh = tuple(m.ravel() for m in mesh)
        f = spec.objective.value_fn(False, self.abs_eps)(_Env(self.mesh, ()))
        f = np.broadcast_to(np.asarray(f, dtype=float), self.mesh[0].shape)
        self.f = np.where(np.isnan(f), np.inf, f)
        self._masks: dict[bytes, np.ndarray] = {}

    def _mask(self, point: np.ndarray) -> np.ndarray:
        key = point.tobytes()
        m = self._masks.get(key)
        if m is None:
            xi = tuple(float(v) for v in point)
            env = _Env(self.mesh, xi)
            m = np.ones(self.mesh[0].shape, dtype=bool)
            for g in self.spec.constraints:
                val = g.value_fn(False, self.abs_eps)(env)
                # nan (domain error) counts as infeasible
                m &= np.asarray(val <= self.cfg.feas_tol)
            self._masks[key] = m
        return m

    def _refine(self, center, points):
        r, w = self.cfg.refine_factor, self.cfg.refine_window
        offsets = [np.arange(-r * w, r * w + 1) * (h / r) for h in self.steps]
        local_axes = []
        for c, off, (lo, hi) in zip(center, offsets, self.spec.bounds):
            ax = c + off
            local_axes.append(ax[(ax >= lo) & (ax <= hi)])
        mesh = tuple(m.ravel() for m in np.meshgrid(*local_axes, indexing="ij"))
        f = self.spec.objective.value_fn(False, self.abs_eps)(_Env(mesh, ()))
        f = np.broadcast_to(np.asarray(f, dtype=float), mesh[0].shape)
        feas = ~np.isnan(f)
        for point in points:
            env = _Env(mesh, tuple(float(v) for v in point))
            for g in self.spec.constraints:
                feas &= np.asarray(g.value_fn(False, self.abs_eps)(env) <= self.cfg.feas_tol)
        cand = np.where(feas, f, np.inf)
        k = int(np.argmin(cand))
        return np.array([m[k] for m in mesh]), float(cand[k])

    def solve_points(self, points: np.ndarray) -> Solution:
        feas = np.ones(self.f.shape, dtype=bool)
        for point in points:
            feas &= self._mask(point)
        cand = np.where(feas, self.f, np.inf)
        k = int(np.argmin(cand))
        if not np.isfinite(cand[k]):
            x = self.start
            return self._finish(points, x, 1, status=INFEASIBLE)
        x = np.array([m[k] for m in self.mesh])
        x_ref, f_ref = self._refine(x, points)
        if f_ref < cand[k]:
            x = x_ref
        return self._finish(points, x, 2)


_BACKENDS = {PENALTY: PenaltyBackend, GRID: GridBackend}


class Solver:
    """A backend bound to one problem, memoizing solves by embedded point set."""

    def __init__(self, spec: ProblemSpec, cfg: SolverConfig = SolverConfig()):
        self.spec = spec
        self.cfg = cfg
        self.backend = _BACKENDS[cfg.solver_id](spec, cfg)
        self._memo: dict[bytes, Solution] = {}

    @property
    def fingerprint(self) -> dict:
        return self.backend.fingerprint

    def solve_points(self, points) -> Solution:
        pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, self.spec.u))
        key = pts.tobytes()
        sol = self._memo.get(key)
        if sol is None:
            sol = self.backend.solve_points(pts)
            self._memo[key] = sol
        return sol

    def solve(self, inst: DepInstance) -> Solution:
        if inst.spec is not self.spec:
            raise ConfigError("instance belongs to a different problem")
        return self.solve_points(inst.points)


def solve(inst: DepInstance, cfg: SolverConfig = SolverConfig()) -> Solution:
    return Solver(inst.spec, cfg).solve(inst)

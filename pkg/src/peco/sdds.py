"""Boundary-forming and solution-determining subsets of embedded points.

Both analyses are exhaustive and meant for desk-sized instances: BFDS by
greedy elimination against a probe grid, SDDS families by solving the DEP
over every subset of the scenarios.
"""
from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ScenarioSet
from .dep import OPTIMAL, Solver, SolverConfig, solutions_equal
from .dsl import BinOp, ProblemSpec, Var, _Env
from .errors import (
    ConfigError,
    FamilyEmpty,
    FamilyTooLarge,
    FingerprintMismatch,
    ProbeTooCoarse,
    SolveFailure,
)

MAX_EXHAUSTIVE = 15
MAX_BFDS_POINTS = 64


@dataclass(frozen=True)
class BfdsResult:
    bfds: tuple[int, ...]
    probe_points: np.ndarray = field(repr=False)
    certified: bool
    unique: bool = True


def _bound_form(expr) -> tuple[int, int, int] | None:
    """Recognize ``xi_k - x_i`` (lower bound, +1) or ``x_i - xi_k`` (upper, -1)."""
    node = expr.root
    if not (isinstance(node, BinOp) and node.op == "-"):
        return None
    a, b = node.left, node.right
    if isinstance(a, Var) and isinstance(b, Var):
        if a.kind == "xi" and b.kind == "x":
            return b.index - 1, a.index - 1, +1
        if a.kind == "x" and b.kind == "xi":
            return a.index - 1, b.index - 1, -1
    return None


def _probe_grid(spec: ProblemSpec, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in spec.bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _feasibility_masks(spec: ProblemSpec, full: ScenarioSet, probes: np.ndarray, tol: float):
    env_x = tuple(probes[:, j] for j in range(spec.n))
    masks = []
    for point in full.values:
        env = _Env(env_x, tuple(float(v) for v in point))
        m = np.ones(probes.shape[0], dtype=bool)
        for g in spec.constraints:
            m &= np.asarray(g.value_fn(False)(env) <= tol)
        masks.append(m)
    return masks


def _greedy(masks: list[np.ndarray], size: int) -> tuple[int, ...]:
    if not masks:
        return ()
    target = np.logical_and.reduce(masks) if masks else np.ones(size, dtype=bool)
    kept = list(range(len(masks)))
    changed = True
    while changed:
        changed = False
        # later points go first so that among duplicates the earliest survives
        for p in reversed(list(kept)):
            rest = [masks[q] for q in kept if q != p]
            reduced = np.logical_and.reduce(rest) if rest else np.ones(size, dtype=bool)
            if np.array_equal(reduced, target):
                kept.remove(p)
                changed = True
    return tuple(kept)


def _certified_bfds(spec: ProblemSpec, full: ScenarioSet, forms) -> tuple[tuple[int, ...], bool]:
    """Exact BFDS when every constraint is a single-variable bound."""
    # per (variable, direction): the tightest bound over all points and forms
    tightest: dict[tuple[int, int], float] = {}
    for var, comp, sign in forms:
        vals = full.values[:, comp]
        ext = float(vals.max() if sign > 0 else vals.min())
        key = (var, sign)
        if key not in tightest:
            tightest[key] = ext
        else:
            tightest[key] = max(tightest[key], ext) if sign > 0 else min(tightest[key], ext)
    groups = []
    for (var, sign), ext in sorted(tightest.items()):
        lo, hi = spec.bounds[var]
        # a bound that does not cut into the box never shapes the feasible set
        if (sign > 0 and ext <= lo) or (sign < 0 and ext >= hi):
            continue
        hits = set()
        for v, comp, s in forms:
            if (v, s) == (var, sign):
                hits.update(int(i) for i in np.flatnonzero(full.values[:, comp] == ext))
        groups.append(hits)
    if not groups:
        return (), True
    candidates = sorted(set().union(*groups))
    for size in range(1, len(groups) + 1):
        covers = [c for c in itertools.combinations(candidates, size)
                  if all(g.intersection(c) for g in groups)]
        if covers:
            return covers[0], len(covers) == 1
    raise AssertionError("unreachable: every group has a candidate")


def find_bfds(spec: ProblemSpec, full: ScenarioSet, probe_per_axis: int = 41,
              tol: float = 1e-8) -> BfdsResult:
    """Smallest subset reproducing the feasible set, judged on a probe grid.

    Pure bound constraints (``xi_k - x_i`` / ``x_i - xi_k``) are resolved
    exactly and reported as certified.
    """
    if spec.n > 3:
        raise ConfigError("BFDS probing supports n <= 3")
    if len(full) > MAX_BFDS_POINTS:
        raise FamilyTooLarge(f"BFDS probing supports at most {MAX_BFDS_POINTS} points")
    probes = _probe_grid(spec, probe_per_axis)
    forms = [_bound_form(g) for g in spec.constraints]
    if all(f is not None for f in forms):
        bfds, unique = _certified_bfds(spec, full, forms)
        return BfdsResult(bfds, probes, True, unique)
    masks = _feasibility_masks(spec, full, probes, tol)
    coarse = _greedy(masks, probes.shape[0])
    fine_probes = _probe_grid(spec, 2 * probe_per_axis - 1)
    fine = _greedy(_feasibility_masks(spec, full, fine_probes, tol), fine_probes.shape[0])
    if fine != coarse:
        warnings.warn(
            f"BFDS differs between probe grids ({coarse} vs {fine}); using the finer one",
            ProbeTooCoarse,
            stacklevel=2,
        )
    return BfdsResult(fine, fine_probes, False, True)


# SDDS families

@dataclass(frozen=True)
class SddsFamily:
    """SDDS index sets plus union sizes over every nonempty group of them."""

    sets: tuple[tuple[int, ...], ...]
    r_bar: dict[tuple[int, ...], int]
    fingerprint: dict
    scenario_count: int = 0
    reference: tuple[float, ...] = ()

    @property
    def R(self) -> int:
        return len(self.sets)

    @classmethod
    def from_sets(cls, sets, fingerprint=None, scenario_count=0, reference=()):
        sets = tuple(tuple(sorted(int(i) for i in s)) for s in sets)
        if len(set(sets)) != len(sets):
            raise ValueError("SDDS members must be pairwise distinct")
        r_bar = {}
        for size in range(1, len(sets) + 1):
            for group in itertools.combinations(range(1, len(sets) + 1), size):
                union = set().union(*(sets[i - 1] for i in group))
                r_bar[group] = len(union)
        return cls(sets, r_bar, dict(fingerprint or {}), scenario_count, tuple(reference))

    def to_dict(self) -> dict:
        return {
            "sets": [list(s) for s in self.sets],
            "r_bar": [[list(k), v] for k, v in r_bar_vector(self, allow_empty=True)],
            "fingerprint": self.fingerprint,
            "scenario_count": self.scenario_count,
            "reference": list(self.reference),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "SddsFamily":
        fam = cls.from_sets(
            obj["sets"], obj.get("fingerprint"), obj.get("scenario_count", 0), obj.get("reference", ())
        )
        if "r_bar" in obj:
            stored = {tuple(k): int(v) for k, v in obj["r_bar"]}
            if stored != fam.r_bar:
                raise ConfigError("stored r_bar disagrees with the family's sets")
        return fam

    def check_fingerprint(self, cfg: SolverConfig, spec: ProblemSpec | None = None) -> None:
        current = cfg.fingerprint(spec)
        if self.fingerprint and self.fingerprint != current:
            diff = sorted(k for k in set(current) | set(self.fingerprint)
                          if current.get(k) != self.fingerprint.get(k))
            raise FingerprintMismatch(f"family was computed under different solver settings: {diff}")


def r_bar_vector(family: SddsFamily, allow_empty: bool = False) -> list[tuple[tuple[int, ...], int]]:
    """(index group, union size) ordered by group size, then lexicographically."""
    if not family.sets and not allow_empty:
        raise FamilyEmpty("the SDDS family is empty")
    return sorted(family.r_bar.items(), key=lambda kv: (len(kv[0]), kv[0]))


def enumerate_sdds(spec: ProblemSpec, full: ScenarioSet, cfg: SolverConfig = SolverConfig(),
                   cutoff: int = MAX_EXHAUSTIVE, solver: Solver | None = None) -> SddsFamily:
    """All minimal subsets whose DEP reproduces the full DEP's solution.

    Every subset is solved once (binary-counting order). A nonempty subset is
    an SDDS when its solution matches the reference within ``sol_tol`` and
    dropping any one of its points breaks that match.
    """
    S = len(full)
    if S > cutoff:
        raise FamilyTooLarge(f"{S} scenarios exceed the exhaustive cutoff of {cutoff}")
    solver = solver or Solver(spec, cfg)
    if solver.cfg != cfg:
        raise ConfigError("solver was built with a different config")
    values = full.values
    ref = solver.solve_points(values)
    if ref.status != OPTIMAL:
        raise SolveFailure(f"reference solve ended with status {ref.status}", tuple(range(S)))
    matches = np.zeros(1 << S, dtype=bool)
    for bits in range(1 << S):
        idx = [i for i in range(S) if bits >> i & 1]
        sol = solver.solve_points(values[idx])
        if sol.status != OPTIMAL:
            raise SolveFailure(f"subset {idx} ended with status {sol.status}", tuple(idx))
        matches[bits] = solutions_equal(sol, ref, cfg.sol_tol)
    sets = []
    for bits in range(1, 1 << S):
        if not matches[bits]:
            continue
        if all(not matches[bits & ~(1 << i)] for i in range(S) if bits >> i & 1):
            sets.append(tuple(i for i in range(S) if bits >> i & 1))
    sets.sort(key=lambda s: (len(s), s))
    return SddsFamily.from_sets(sets, solver.fingerprint, S, ref.x_star)

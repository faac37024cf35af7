"""The four-step procedure: probable data, R_bar, sample size and draw, solve.

Each stage runs under a tag; failures surface as :class:`StageError` with the
tag and the underlying exception attached. Reports carry no wall-clock data,
so identical configs give byte-identical reports.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data import NORMS, DataSet, build_d_alpha, read_csv, rule_of_thumb_eta, underlying_set
from .dep import Solver, SolverConfig, build_dep
from .dsl import ProblemSpec
from .errors import (
    ConfigError,
    DimensionError,
    EmptyProbableSet,
    ExactModeTooLarge,
    InsufficientHistory,
    MixedFamilySizes,
    PecoError,
    StageError,
)
from .samplesize import PRNG, RhoInput, draw_d_emb, min_z, rho_exact
from .sdds import MAX_EXHAUSTIVE, enumerate_sdds, r_bar_vector
from .store import SOURCE_EXACT, SOURCE_LEARNED, RunRecord, store_append, store_query

EXACT = "exact"
LEARNED = "learned"
STAGES = ("d_alpha", "r_bar", "sample_size", "solve", "record")


@dataclass(frozen=True)
class PipelineConfig:
    problem: Path
    data: Path
    alpha: float
    target: float
    seed: int
    eta: float | None = None
    eta_rule: bool = False
    norm: str = "l2"
    mode: str = EXACT
    k: int = 5
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if (self.eta is None) == (not self.eta_rule):
            raise ConfigError("give exactly one of eta or eta_rule")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 < self.target <= 1.0:
            raise ConfigError("target must lie in (0, 1]")
        if self.mode not in (EXACT, LEARNED):
            raise ConfigError(f"mode must be {EXACT!r} or {LEARNED!r}")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}")
        if self.k < 1:
            raise ConfigError("k must be positive")

    @classmethod
    def from_dict(cls, obj: dict, base: Path | None = None) -> "PipelineConfig":
        obj = dict(obj)
        base = Path(base) if base is not None else Path(".")
        try:
            problem = base / obj.pop("problem")
            data = base / obj.pop("data")
            solver = SolverConfig.from_dict(obj.pop("solver", {}))
            return cls(problem=problem, data=data, solver=solver, **obj)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad pipeline config: {exc}") from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read pipeline config {path}: {exc}") from None
        return cls.from_dict(obj, path.parent)


@dataclass(frozen=True)
class PipelineReport:
    body: dict

    def to_json(self) -> str:
        return json.dumps(self.body, sort_keys=True, indent=2) + "\n"

    def __getitem__(self, key):
        return self.body[key]


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        # configuration problems keep their own type; everything else gets the stage tag
        if exc is None or isinstance(exc, (StageError, ConfigError)):
            return False
        if isinstance(exc, (PecoError, ArithmeticError, ValueError, OSError)):
            raise StageError(self.name, exc) from exc
        return False


# learned R_bar

def _monotone_closure(groups, values) -> list[int]:
    """Raise each entry to the max over its subgroups so R_bar grows with the group."""
    index = {g: i for i, g in enumerate(groups)}
    out = list(values)
    for i, g in enumerate(groups):
        for drop in g if len(g) > 1 else ():
            sub = tuple(x for x in g if x != drop)
            out[i] = max(out[i], out[index[sub]])
    return out


def predict_r_bar(records: list[RunRecord], delta, k: int = 5) -> tuple[tuple[tuple[int, ...], int], ...]:
    """k-nearest-neighbour R_bar in standardized delta space.

    Takes the componentwise median of the neighbours' R_bar vectors and rounds
    up. Only records derived from an enumerated family are used.
    """
    history = [r for r in records if r.r_bar_source == SOURCE_EXACT]
    if len(history) < k:
        raise InsufficientHistory(f"need {k} records, store has {len(history)}")
    sizes = {r.family_size for r in history}
    if len(sizes) > 1:
        raise MixedFamilySizes(f"records disagree on the family size: {sorted(sizes)}")
    groups = [g for g, _ in history[0].r_bar]
    X = np.array([r.delta for r in history], dtype=float)
    q = np.asarray(delta, dtype=float).reshape(-1)
    if X.shape[1] != q.size:
        raise DimensionError(f"delta has {q.size} components, history has {X.shape[1]}")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    dist = np.linalg.norm((X - mu) / sd - (q - mu) / sd, axis=1)
    nearest = np.argsort(dist, kind="stable")[:k]
    Y = np.array([history[i].r_bar_values for i in nearest], dtype=float)
    values = [int(math.ceil(v)) for v in np.median(Y, axis=0)]
    values = _monotone_closure(groups, values)
    return tuple(zip(groups, values))


# the pipeline

def _load_inputs(cfg: PipelineConfig) -> tuple[ProblemSpec, DataSet]:
    try:
        spec = ProblemSpec.load(cfg.problem)
        data = read_csv(cfg.data)
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc}") from None
    if data.dimension != spec.u:
        raise DimensionError(f"data has dimension {data.dimension}, problem expects u={spec.u}")
    return spec, data


def run_pipeline(cfg: PipelineConfig, store=None) -> PipelineReport:
    spec, data = _load_inputs(cfg)
    solver_cfg = cfg.solver

    with _Stage("d_alpha"):
        eta = cfg.eta if cfg.eta is not None else rule_of_thumb_eta(data)
        d_alpha = build_d_alpha(data, cfg.alpha, eta, cfg.norm)
        if len(d_alpha) == 0:
            raise EmptyProbableSet(f"no point has vicinity count >= {cfg.alpha} * {len(data)}")
        scen = underlying_set(d_alpha)

    family_sets = None
    with _Stage("r_bar"):
        if cfg.mode == EXACT:
            if len(scen) > MAX_EXHAUSTIVE:
                raise ExactModeTooLarge(
                    f"{len(scen)} probable scenarios; exact mode enumerates at most {MAX_EXHAUSTIVE}"
                )
            family = enumerate_sdds(spec, scen, solver_cfg)
            family_sets = [list(s) for s in family.sets]
            r_bar = tuple(r_bar_vector(family, allow_empty=True))
        else:
            if store is None:
                raise ConfigError("learned mode needs a run-record store")
            if not spec.delta:
                raise ConfigError("learned mode needs a delta vector in the problem file")
            r_bar = predict_r_bar(store_query(store, spec.digest()), spec.delta, cfg.k)

    with _Stage("sample_size"):
        inp = RhoInput(len(scen), tuple((len(g), v) for g, v in r_bar))
        z = min_z(inp, cfg.target)
        rho_z = rho_exact(inp, z)
        d_emb = draw_d_emb(d_alpha, z, cfg.seed)

    with _Stage("solve"):
        solver = Solver(spec, solver_cfg)
        sol = solver.solve(build_dep(spec, d_emb, allow_empty=True)).raise_for_status()

    family_size = sum(1 for g, _ in r_bar if len(g) == 1)
    body = {
        "problem": str(cfg.problem),
        "problem_digest": spec.digest(),
        "data": str(cfg.data),
        "dataset_digest": data.digest(),
        "mode": cfg.mode,
        "alpha": cfg.alpha,
        "eta": eta,
        "eta_source": "value" if cfg.eta is not None else "rule-of-thumb",
        "norm": cfg.norm,
        "d_size": len(data),
        "d_alpha_size": len(d_alpha),
        "d_alpha_scenarios": [list(p) for p in scen.scenarios],
        "d_alpha_counts": [int(c) for c in scen.counts],
        "family": family_sets,
        "family_size": family_size,
        "r_bar": [[list(g), v] for g, v in r_bar],
        "target": cfg.target,
        "z": z,
        "rho_z": float(rho_z),
        "rho_z_exact": f"{rho_z.numerator}/{rho_z.denominator}",
        "seed": cfg.seed,
        "prng": PRNG,
        "d_emb": [list(p) for p in d_emb],
        "solution": sol.to_dict(),
        "solver_fingerprint": solver.fingerprint,
    }

    if store is not None:
        with _Stage("record"):
            record = RunRecord(
                problem_digest=spec.digest(),
                delta=spec.delta,
                r_bar=r_bar,
                family_size=family_size,
                fingerprint=solver.fingerprint,
                seed=cfg.seed,
                alpha=cfg.alpha,
                eta=eta,
                z=z,
                x_star=sol.x_star,
                objective=sol.objective_value,
                dataset_digest=data.digest(),
                r_bar_source=SOURCE_EXACT if cfg.mode == EXACT else SOURCE_LEARNED,
                timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            )
            store_append(store, record)
    return PipelineReport(body)

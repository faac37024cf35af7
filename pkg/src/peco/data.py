"""Multisets of uncertainty data points and neighbourhood-count probabilities.

A :class:`DataSet` is an ordered multiset of historical realizations of the
uncertain vector. Probable data points are those whose eta-vicinity holds at
least ``alpha * D`` points of the full multiset.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, EmptyData

INT = "int"
FLOAT = "float"
NORMS = ("l2", "linf")

# rows compared per block when counting vicinities
_BLOCK = 512


def _as_matrix(values, dimension=None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dimension in (None, 1) else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D array of points, got shape {arr.shape}")
    # -0.0 and 0.0 must dedupe to the same scenario
    return arr + 0.0


@dataclass(frozen=True, eq=False)
class DataSet:
    """Ordered multiset of ``D`` points in ``u`` dimensions.

    ``kinds`` flags each component as ``"int"`` or ``"float"``; integer
    components must hold exact integers.
    """

    values: np.ndarray
    kinds: tuple[str, ...] = ()
    names: tuple[str, ...] = ()

    def __post_init__(self):
        arr = _as_matrix(self.values)
        u = arr.shape[1]
        kinds = tuple(self.kinds) or (FLOAT,) * u
        names = tuple(self.names) or tuple(f"xi{k + 1}" for k in range(u))
        if len(kinds) != u or len(names) != u:
            raise DimensionError(f"{u} components but {len(kinds)} kinds / {len(names)} names")
        for k, kind in enumerate(kinds):
            if kind not in (INT, FLOAT):
                raise ConfigError(f"unknown component kind {kind!r}")
            if kind == INT and arr.size and not np.all(arr[:, k] == np.round(arr[:, k])):
                raise DimensionError(f"component {names[k]} is flagged int but holds non-integers")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("data points must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]], kinds=(), names=(), dimension=None):
        pts = [tuple(p) if np.ndim(p) else (p,) for p in points]
        if not pts:
            if dimension is None:
                raise EmptyData("cannot infer the dimension of an empty point list")
            return cls(np.empty((0, dimension)), kinds, names)
        return cls(np.array(pts, dtype=float), kinds, names)

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def __iter__(self):
        return (tuple(row) for row in self.values.tolist())

    def __eq__(self, other):
        if not isinstance(other, DataSet):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
            and self.kinds == other.kinds
        )

    __hash__ = None

    def subset(self, indices) -> "DataSet":
        idx = np.asarray(list(indices), dtype=int)
        return DataSet(self.values[idx].reshape(len(idx), self.dimension), self.kinds, self.names)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.kinds).encode())
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Distinct points of a multiset, in first-occurrence order, with counts."""

    values: np.ndarray
    counts: np.ndarray
    kinds: tuple[str, ...] = ()
    names: tuple[str, ...] = ()
    first_index: np.ndarray = field(default=None)

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def scenarios(self) -> list[tuple[float, ...]]:
        return [tuple(row) for row in self.values.tolist()]

    def as_dataset(self) -> DataSet:
        return DataSet(self.values, self.kinds, self.names)

    def subset(self, indices) -> "ScenarioSet":
        idx = np.asarray(sorted(indices), dtype=int)
        first = None if self.first_index is None else self.first_index[idx]
        return ScenarioSet(
            self.values[idx].reshape(len(idx), self.dimension),
            self.counts[idx],
            self.kinds,
            self.names,
            first,
        )


def underlying_set(d: DataSet) -> ScenarioSet:
    """Distinct elements of ``d`` (bit-exact equality) with multiplicities."""
    if len(d) == 0:
        raise EmptyData("underlying set of an empty data set")
    order: dict[bytes, int] = {}
    first: list[int] = []
    counts: list[int] = []
    for i, row in enumerate(d.values):
        key = row.tobytes()
        slot = order.get(key)
        if slot is None:
            order[key] = len(first)
            first.append(i)
            counts.append(1)
        else:
            counts[slot] += 1
    first_idx = np.array(first, dtype=int)
    values = d.values[first_idx]
    values.setflags(write=False)
    return ScenarioSet(values, np.array(counts, dtype=int), d.kinds, d.names, first_idx)


def _distances(block: np.ndarray, others: np.ndarray, norm: str) -> np.ndarray:
    diff = np.abs(block[:, None, :] - others[None, :, :])
    if norm == "l2":
        return np.sqrt(np.sum(diff * diff, axis=2))
    if norm == "linf":
        return np.max(diff, axis=2)
    raise ConfigError(f"unknown norm {norm!r}; choose from {NORMS}")


def _check_eta(eta):
    if not (eta > 0 and math.isfinite(eta)):
        raise ValueError(f"eta must be a positive finite number, got {eta!r}")


def vicinity_counts(d: DataSet, eta: float, norm: str = "l2") -> np.ndarray:
    """Number of points of ``d`` (with multiplicity) within ``eta`` of each point."""
    if len(d) == 0:
        raise EmptyData("vicinity counts of an empty data set")
    _check_eta(eta)
    scen = underlying_set(d)
    per_scenario = np.empty(len(scen), dtype=np.int64)
    for start in range(0, len(scen), _BLOCK):
        block = scen.values[start:start + _BLOCK]
        near = _distances(block, scen.values, norm) <= eta
        per_scenario[start:start + len(block)] = near.astype(np.int64) @ scen.counts
    # map back: every copy of a scenario shares its count
    slot = {row.tobytes(): k for k, row in enumerate(scen.values)}
    return np.array([per_scenario[slot[row.tobytes()]] for row in d.values], dtype=np.int64)


def empirical_probability(d: DataSet, query, eta: float, norm: str = "l2") -> float:
    """Fraction of ``d`` lying within ``eta`` of ``query`` (inclusive)."""
    if len(d) == 0:
        raise EmptyData("empirical probability over an empty data set")
    _check_eta(eta)
    q = np.atleast_1d(np.asarray(query, dtype=float)) + 0.0
    if q.shape != (d.dimension,):
        raise DimensionError(f"query has dimension {q.size}, data set has {d.dimension}")
    hits = _distances(q[None, :], d.values, norm)[0] <= eta
    return int(np.count_nonzero(hits)) / len(d)


def build_d_alpha(d: DataSet, alpha: float, eta: float, norm: str = "l2") -> DataSet:
    """Sub-multiset of points whose vicinity count reaches ``alpha * D``.

    Order and multiplicity of the surviving points are preserved.
    """
    if len(d) == 0:
        raise EmptyData("cannot extract probable points from an empty data set")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    counts = vicinity_counts(d, eta, norm)
    keep = np.flatnonzero(counts >= alpha * len(d))
    return d.subset(keep)


def rule_of_thumb_eta(d: DataSet, c: float = 1.06) -> float:
    """Scott-style bandwidth ``c * D**(-1/(u+4)) * mean per-component std``.

    Never applied implicitly; callers opt in.
    """
    if len(d) < 2:
        raise EmptyData("rule-of-thumb bandwidth needs at least two points")
    std = np.std(d.values, axis=0, ddof=1)
    scale = float(np.mean(std))
    if scale <= 0:
        raise ValueError("all points coincide; rule-of-thumb bandwidth is zero")
    return c * len(d) ** (-1.0 / (d.dimension + 4)) * scale


# CSV ingestion

def _parse_kind_row(row):
    cells = [c.strip().lower() for c in row]
    if cells and all(c in (INT, FLOAT) for c in cells):
        return tuple(cells)
    return None


def read_csv(path_or_buffer) -> DataSet:
    """Read a data set: header row of names, optional row of int/float flags."""
    if isinstance(path_or_buffer, (str, PathLike)):
        with open(path_or_buffer, newline="", encoding="utf-8") as fh:
            return read_csv(fh)
    reader = csv.reader(path_or_buffer)
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyData("CSV has no header")
    names = tuple(c.strip() for c in rows[0])
    body = rows[1:]
    kinds = ()
    if body:
        parsed = _parse_kind_row(body[0])
        if parsed is not None:
            kinds = parsed
            body = body[1:]
    u = len(names)
    points = []
    for lineno, row in enumerate(body, start=2 + (1 if kinds else 0)):
        if len(row) != u:
            raise DimensionError(f"line {lineno}: expected {u} values, got {len(row)}")
        try:
            points.append([float(c) for c in row])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    values = np.array(points, dtype=float).reshape(len(points), u)
    return DataSet(values, kinds, names)


def write_csv(d: DataSet, path_or_buffer, with_kinds: bool = True) -> None:
    if isinstance(path_or_buffer, (str, PathLike)):
        with open(path_or_buffer, "w", newline="", encoding="utf-8") as fh:
            write_csv(d, fh, with_kinds)
        return
    writer = csv.writer(path_or_buffer, lineterminator="\n")
    writer.writerow(d.names)
    if with_kinds:
        writer.writerow(d.kinds)
    for row in d.values.tolist():
        writer.writerow(
            [str(int(v)) if kind == INT else repr(v) for v, kind in zip(row, d.kinds)]
        )


def dumps_csv(d: DataSet) -> str:
    buf = io.StringIO()
    write_csv(d, buf)
    return buf.getvalue()

"""Append-only JSON-lines store of pipeline run records."""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

from filelock import FileLock

from .errors import CorruptRecord, CorruptRecordWarning

# R_bar values came from a learned prediction rather than an enumerated family
SOURCE_EXACT = "exact"
SOURCE_LEARNED = "learned"


@dataclass(frozen=True)
class RunRecord:
    problem_digest: str
    delta: tuple[float, ...]
    r_bar: tuple[tuple[tuple[int, ...], int], ...]
    family_size: int
    fingerprint: dict
    seed: int
    alpha: float
    eta: float
    z: int
    x_star: tuple[float, ...]
    objective: float
    dataset_digest: str
    r_bar_source: str = SOURCE_EXACT
    timestamp: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        r_bar = tuple((tuple(int(i) for i in k), int(v)) for k, v in self.r_bar)
        if len(r_bar) != (1 << self.family_size) - 1:
            raise ValueError(f"{len(r_bar)} r_bar entries for a family of {self.family_size}")
        object.__setattr__(self, "r_bar", r_bar)
        object.__setattr__(self, "delta", tuple(float(v) for v in self.delta))
        object.__setattr__(self, "x_star", tuple(float(v) for v in self.x_star))

    @property
    def r_bar_values(self) -> tuple[int, ...]:
        return tuple(v for _, v in self.r_bar)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta"] = list(self.delta)
        d["x_star"] = list(self.x_star)
        d["r_bar"] = [[list(k), v] for k, v in self.r_bar]
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "RunRecord":
        return cls(**obj)


def _lock(path: Path) -> FileLock:
    return FileLock(str(path) + ".lock")


def store_append(path, record: RunRecord) -> None:
    path = Path(path)
    line = json.dumps(record.to_dict(), sort_keys=True) + "\n"
    with _lock(path):
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())


def store_read(path, strict: bool = False) -> list[RunRecord]:
    """All readable records in append order.

    Unparseable lines are skipped with a warning naming their line numbers,
    or raise :class:`CorruptRecord` when ``strict``.
    """
    path = Path(path)
    if not path.exists():
        return []
    records, bad = [], []
    with _lock(path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.from_dict(json.loads(line)))
        except (ValueError, TypeError, KeyError):
            bad.append(lineno)
    if bad:
        if strict:
            raise CorruptRecord(bad)
        warnings.warn(f"skipped corrupt records on lines {bad}", CorruptRecordWarning, stacklevel=2)
    return records


def store_query(path, problem_digest: str | None = None, strict: bool = False) -> list[RunRecord]:
    records = store_read(path, strict)
    if problem_digest is None:
        return records
    return [r for r in records if r.problem_digest == problem_digest]

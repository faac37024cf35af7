"""How many distinct probable scenarios to embed.

``rho(z)`` is the probability that ``z`` scenarios drawn uniformly without
replacement from ``D`` distinct probable scenarios contain at least one
solution-determining set. By inclusion-exclusion over the family,

    rho(z) = sum_j (-1)**(J_j + 1) * C(D - Rbar_j, z - Rbar_j) / C(D, z)

where ``j`` runs over nonempty groups of family members, ``J_j`` is the group
size and ``Rbar_j`` the size of the union of its members. Binomials vanish
outside ``0 <= b <= a``, and the sum is evaluated in exact rationals.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .data import DataSet, underlying_set
from .errors import (
    AssumptionViolated,
    FingerprintMismatch,
    NoFeasibleZ,
    NonMonotoneRho,
    ZTooLarge,
)
from .sdds import SddsFamily, r_bar_vector

PRNG = "numpy.PCG64/SeedSequence"
MC_BATCH = 10_000


def comb0(a: int, b: int) -> int:
    """Binomial coefficient extended by zero outside ``0 <= b <= a``."""
    if b < 0 or a < 0 or b > a:
        return 0
    return math.comb(a, b)


@dataclass(frozen=True)
class RhoInput:
    """Distinct probable scenario count plus (group size, union size) pairs.

    An empty ``r_bar`` stands for an empty family: no data point binds, so
    every draw reproduces the solution.
    """

    d_alpha_size: int
    r_bar: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "r_bar", tuple((int(j), int(r)) for j, r in self.r_bar))
        if self.d_alpha_size < 0:
            raise ValueError("d_alpha_size must be nonnegative")
        for j, r in self.r_bar:
            if j < 1 or r < 1:
                raise ValueError(f"invalid r_bar entry {(j, r)}")
            if r > self.d_alpha_size:
                raise AssumptionViolated(
                    f"a union of {r} scenarios cannot fit in {self.d_alpha_size} probable scenarios"
                )
        n = len(self.r_bar)
        singles = sum(1 for j, _ in self.r_bar if j == 1)
        if n and (n + 1) != 1 << singles:
            raise ValueError(f"{n} r_bar entries do not form 2^R - 1 groups for R = {singles}")

    @classmethod
    def from_family(cls, family: SddsFamily, d_alpha_size: int) -> "RhoInput":
        return cls(d_alpha_size, tuple((len(k), v) for k, v in r_bar_vector(family, allow_empty=True)))

    @property
    def R(self) -> int:
        return sum(1 for j, _ in self.r_bar if j == 1)


def rho_exact(inp: RhoInput, z: int) -> Fraction:
    D = inp.d_alpha_size
    if not 0 <= z <= D:
        raise ValueError(f"z must lie in [0, {D}], got {z}")
    if not inp.r_bar:
        return Fraction(1)
    num = 0
    for j, r in inp.r_bar:
        term = comb0(D - r, z - r)
        num += term if j % 2 else -term
    return Fraction(num, math.comb(D, z))


def rho(inp: RhoInput, z: int) -> float:
    return float(rho_exact(inp, z))


def rho_table(inp: RhoInput) -> list[tuple[int, Fraction]]:
    return [(z, rho_exact(inp, z)) for z in range(inp.d_alpha_size + 1)]


def min_z(inp: RhoInput, target: float) -> int:
    """Smallest ``z`` with ``rho(z) >= target`` by linear scan.

    The scan does not rely on monotonicity but warns if it sees a decrease.
    """
    if not 0.0 < target <= 1.0:
        raise ValueError(f"target must lie in (0, 1], got {target!r}")
    goal = Fraction(target)
    found = None
    prev = None
    for z, r in rho_table(inp):
        if prev is not None and r < prev:
            warnings.warn(f"rho decreases between z={z - 1} and z={z}", NonMonotoneRho, stacklevel=2)
        prev = r
        if found is None and r >= goal:
            found = z
    if found is None:
        raise NoFeasibleZ(f"rho never reaches {target}; max is {float(prev)}")
    return found


# Monte Carlo check

def _batch_rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, batch])))


def _draw_prefixes(rng: np.random.Generator, count: int, D: int, z: int) -> np.ndarray:
    """``count`` rows of a uniform z-prefix of a Fisher-Yates shuffle of range(D)."""
    perm = np.tile(np.arange(D), (count, 1))
    rows = np.arange(count)
    for i in range(z):
        j = rng.integers(i, D, size=count)
        a = perm[rows, i].copy()
        perm[rows, i] = perm[rows, j]
        perm[rows, j] = a
    return perm[:, :z]


def monte_carlo_rho(family: SddsFamily | Sequence[Sequence[int]], d_alpha_size: int, z: int,
                    trials: int, seed: int) -> float:
    """Fraction of random z-subsets of range(d_alpha_size) containing a family member.

    Family scenario indices are mapped to distinct indices in order of first
    appearance; remaining indices act as fillers. Trials run in fixed batches
    with per-batch seeds, so the result is independent of how batches are
    scheduled.
    """
    sets = family.sets if isinstance(family, SddsFamily) else tuple(tuple(s) for s in family)
    if not 0 <= z <= d_alpha_size:
        raise ValueError(f"z must lie in [0, {d_alpha_size}]")
    if not sets:
        return 1.0
    slot: dict[int, int] = {}
    for s in sets:
        for p in s:
            slot.setdefault(p, len(slot))
    if len(slot) > d_alpha_size:
        raise AssumptionViolated("family uses more scenarios than are available")
    masks = [np.array([slot[p] for p in s]) for s in sets]
    hits = 0
    for b, start in enumerate(range(0, trials, MC_BATCH)):
        count = min(MC_BATCH, trials - start)
        chosen = np.zeros((count, d_alpha_size), dtype=bool)
        picks = _draw_prefixes(_batch_rng(seed, b), count, d_alpha_size, z)
        np.put_along_axis(chosen, picks, True, axis=1)
        ok = np.zeros(count, dtype=bool)
        for m in masks:
            ok |= np.all(chosen[:, m], axis=1)
        hits += int(np.count_nonzero(ok))
    return hits / trials


def draw_d_emb(d_alpha: DataSet, z: int, seed: int) -> DataSet:
    """``z`` distinct scenarios of ``d_alpha``, uniformly without replacement."""
    scen = underlying_set(d_alpha)
    if z > len(scen):
        raise ZTooLarge(f"z={z} exceeds the {len(scen)} distinct probable scenarios")
    if z < 0:
        raise ValueError("z must be nonnegative")
    idx = _draw_prefixes(_batch_rng(seed, 0), 1, len(scen), z)[0]
    return DataSet(scen.values[idx].reshape(z, scen.dimension), d_alpha.kinds, d_alpha.names)


# plans

@dataclass(frozen=True)
class SampleSizePlan:
    d_alpha_size: int
    r_bar: tuple[tuple[int, int], ...]
    target: float
    z_min: int
    seed: int
    rho_table: tuple[tuple[int, float], ...] = field(repr=False)
    prng: str = PRNG

    def to_dict(self) -> dict:
        return {
            "d_alpha_size": self.d_alpha_size,
            "r_bar": [list(e) for e in self.r_bar],
            "target": self.target,
            "z_min": self.z_min,
            "seed": self.seed,
            "prng": self.prng,
            "rho_table": [list(e) for e in self.rho_table],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def plan_sample_size(inp: RhoInput, target: float, seed: int = 0) -> SampleSizePlan:
    z = min_z(inp, target)
    table = tuple((k, float(r)) for k, r in rho_table(inp))
    return SampleSizePlan(inp.d_alpha_size, inp.r_bar, float(target), z, int(seed), table)


def plan_for_family(family: SddsFamily, d_alpha_size: int, target: float, seed: int = 0,
                    fingerprint: dict | None = None) -> SampleSizePlan:
    """Plan from an enumerated family, refusing one built under other solver settings."""
    if fingerprint is not None and family.fingerprint and family.fingerprint != fingerprint:
        raise FingerprintMismatch("family fingerprint does not match the current solver config")
    return plan_sample_size(RhoInput.from_family(family, d_alpha_size), target, seed)

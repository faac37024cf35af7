"""Separable analytic densities used as fixtures and validation oracles.

Each factor is a mixture of exponential-quadratic bumps written in the
literal form ``w / sqrt(norm) * exp(-(x - center)**2 / div)``. ``norm`` is the
full quantity under the square root, so a standard normal component is
``w=1, norm=2*pi, center=0, div=2``. No normalization is imposed; the
two-mode fixture shipped in ``fixtures/eq5_density.json`` integrates to 0.5.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.special import ndtri

from .data import DataSet
from .errors import DegenerateDensity, DimensionError, NotNormalized

BOX_SCALES = 8.0


@dataclass(frozen=True)
class Component:
    w: float
    norm: float
    center: float
    div: float

    def __post_init__(self):
        if not (self.w >= 0 and self.norm > 0 and self.div > 0):
            raise ValueError(f"invalid mixture component {self}")

    @property
    def scale(self) -> float:
        """Standard deviation of the Gaussian with the same shape."""
        return math.sqrt(self.div / 2.0)

    @property
    def mass(self) -> float:
        return self.w * math.sqrt(math.pi * self.div / self.norm)


@dataclass(frozen=True)
class MixtureDensity1D:
    components: tuple[Component, ...]

    def __post_init__(self):
        comps = tuple(c if isinstance(c, Component) else Component(**c) for c in self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        if not math.isclose(sum(c.w for c in comps), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("mixture weights must sum to 1")
        object.__setattr__(self, "components", comps)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in self.components:
            out = out + c.w / math.sqrt(c.norm) * np.exp(-((x - c.center) ** 2) / c.div)
        return out

    def box(self, scales: float = BOX_SCALES) -> tuple[float, float]:
        lo = min(c.center - scales * c.scale for c in self.components)
        hi = max(c.center + scales * c.scale for c in self.components)
        return lo, hi


class Density(Protocol):
    """What the quadrature routines need from a density."""

    dimension: int

    def __call__(self, points) -> np.ndarray: ...

    def quadrature_box(self) -> list[tuple[float, float]]: ...


@dataclass(frozen=True)
class ProductDensity:
    factors: tuple[MixtureDensity1D, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise ValueError("a product density needs at least one factor")

    @property
    def dimension(self) -> int:
        return len(self.factors)

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1:] != (self.dimension,):
            raise DimensionError(f"points must have trailing dimension {self.dimension}, got {pts.shape}")
        out = np.ones(pts.shape[:-1])
        for k, f in enumerate(self.factors):
            out = out * f(pts[..., k])
        return out

    def quadrature_box(self) -> list[tuple[float, float]]:
        return [f.box() for f in self.factors]

    def grid_values(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        """Density on the tensor grid spanned by ``axes`` (outer product)."""
        out = np.ones(())
        for f, ax in zip(self.factors, axes):
            out = np.multiply.outer(out, f(ax))
        return out

    # serialization

    def to_dict(self) -> dict:
        return {
            "factors": [
                {"components": [{"w": c.w, "norm": c.norm, "center": c.center, "div": c.div}
                                for c in f.components]}
                for f in self.factors
            ]
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ProductDensity":
        return cls(tuple(
            MixtureDensity1D(tuple(Component(**c) for c in f["components"]))
            for f in obj["factors"]
        ))

    @classmethod
    def load(cls, path) -> "ProductDensity":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def standard_normal() -> ProductDensity:
    return ProductDensity((MixtureDensity1D((Component(1.0, 2 * math.pi, 0.0, 2.0),)),))


def density_eval(d: Density, point) -> float:
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if p.shape != (d.dimension,):
        raise DimensionError(f"point has dimension {p.size}, density has {d.dimension}")
    return float(d(p))


def xi_alpha_member(d: Density, point, alpha: float) -> bool:
    """Membership in the superlevel set {density >= alpha}."""
    return density_eval(d, point) >= alpha


@dataclass(frozen=True)
class XiAlphaRegion:
    density: ProductDensity
    alpha: float

    def __contains__(self, point) -> bool:
        return xi_alpha_member(self.density, point, self.alpha)


# quadrature

@dataclass(frozen=True)
class QuadratureSettings:
    nodes: int = 2001
    mass_tol: float = 1e-6
    v_tol: float = 1e-10
    max_iter: int = 200


def _trapezoid_weights(lo, hi, n):
    h = (hi - lo) / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w, h


def _uniform_sum_cdf(s, a, b):
    """P(A + B <= s) for independent A ~ U[-a/2, a/2], B ~ U[-b/2, b/2]."""
    a, b = np.maximum(a, b), np.minimum(a, b)
    t = s + (a + b) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        rise = np.where(b > 0, t * t / (2 * a * b), 0.0)
        mid = np.where(a > 0, (2 * t - b) / (2 * a), 0.0)
        tail = np.where(b > 0, 1 - (a + b - t) ** 2 / (2 * a * b), 1.0)
    out = np.where(t <= b, rise, np.where(t <= a, mid, tail))
    out = np.where(t <= 0, 0.0, out)
    out = np.where(t >= a + b, 1.0, out)
    # flat cells: inclusive step
    return np.where(a == 0, (s >= 0).astype(float), out)


class _Grid:
    """Tensor trapezoid grid with per-node cell fractions for superlevel sets."""

    def __init__(self, d: Density, nodes: int):
        box = d.quadrature_box()
        if len(box) > 2:
            raise DimensionError("superlevel quadrature supports at most two dimensions")
        self.axes, weights, steps = [], [], []
        for lo, hi in box:
            self.axes.append(np.linspace(lo, hi, nodes))
            w, h = _trapezoid_weights(lo, hi, nodes)
            weights.append(w)
            steps.append(h)
        if hasattr(d, "grid_values"):
            self.values = d.grid_values(self.axes)
        else:
            mesh = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)
            self.values = np.asarray(d(mesh), dtype=float)
        w = np.ones(())
        for wk in weights:
            w = np.multiply.outer(w, wk)
        self.mass_weights = w * self.values
        spreads = []
        for axis, h in enumerate(steps):
            g = np.gradient(self.values, h, axis=axis)
            c = np.gradient(g, h, axis=axis)
            # linear plus quadratic variation across one cell
            spreads.append(np.abs(g) * h + np.abs(c) * h * h / 8)
        self.spread_a = spreads[0]
        self.spread_b = spreads[1] if len(spreads) > 1 else np.zeros_like(spreads[0])

    def top_level(self) -> float:
        """Smallest level at which every cell fraction vanishes."""
        return float(np.max(self.values + (self.spread_a + self.spread_b) / 2))

    def total(self) -> float:
        return float(np.sum(self.mass_weights))

    def superlevel_mass(self, v: float) -> float:
        frac = _uniform_sum_cdf(self.values - v, self.spread_a, self.spread_b)
        return float(np.sum(self.mass_weights * frac))


def superlevel_mass(d: Density, v: float, quadrature: QuadratureSettings = QuadratureSettings(),
                    normalize: bool = False) -> float:
    """Mass of {density >= v}, optionally divided by the total mass."""
    grid = _Grid(d, quadrature.nodes)
    m = grid.superlevel_mass(v)
    return m / grid.total() if normalize else m


def alpha_from_beta(d: Density, beta: float,
                    quadrature: QuadratureSettings = QuadratureSettings(),
                    normalize: bool = False) -> float:
    """Density level whose superlevel set carries mass ``1 - beta``.

    Bisection on the level over ``[0, max density]``; the mass of each
    superlevel set is integrated on a fixed trapezoid grid, with boundary
    cells weighted by the linearized fraction lying above the level. With
    ``normalize`` the target is ``1 - beta`` of the total mass instead, for
    densities that do not integrate to one.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta!r}")
    grid = _Grid(d, quadrature.nodes)
    total = grid.total()
    if not normalize and abs(total - 1.0) > 10 * quadrature.mass_tol:
        raise NotNormalized(f"density integrates to {total:.8g} on its quadrature box")
    target = (1.0 - beta) * (total if normalize else 1.0)
    lo, hi = 0.0, grid.top_level()
    m_lo, m_hi = grid.superlevel_mass(lo), grid.superlevel_mass(hi)
    if not (m_lo >= target >= m_hi) or m_hi == m_lo:
        raise DegenerateDensity(
            f"cannot bracket mass {target}: mass({lo})={m_lo:.8g}, mass({hi:.6g})={m_hi:.8g}"
        )
    for _ in range(quadrature.max_iter):
        mid = 0.5 * (lo + hi)
        m = grid.superlevel_mass(mid)
        if abs(m - target) <= quadrature.mass_tol:
            return mid
        if m >= target:
            lo, m_lo = mid, m
        else:
            hi, m_hi = mid, m
        if hi - lo <= quadrature.v_tol:
            break
    if m_lo - m_hi > 10 * quadrature.mass_tol:
        raise DegenerateDensity(f"superlevel mass jumps from {m_lo:.6g} to {m_hi:.6g} near v={lo:.10g}")
    return 0.5 * (lo + hi)


# sampling

def _open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms strictly inside (0, 1) on a 2**-53 lattice."""
    return (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) / 2.0**53


def sample(d: ProductDensity, count: int, seed: int) -> DataSet:
    """I.i.d. draws from the normalized version of ``d``.

    Per factor: pick a component with probability proportional to its mass,
    then invert the Gaussian CDF with variance ``div / 2``.
    """
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    columns = []
    for f in d.factors:
        masses = np.array([c.mass for c in f.components])
        cum = np.cumsum(masses / masses.sum())
        pick = np.searchsorted(cum, _open_uniform(rng, count), side="right")
        pick = np.minimum(pick, len(f.components) - 1)
        centers = np.array([c.center for c in f.components])[pick]
        scales = np.array([c.scale for c in f.components])[pick]
        columns.append(centers + scales * ndtri(_open_uniform(rng, count)))
    return DataSet(np.column_stack(columns))


def contour_grid(d: ProductDensity, alpha: float, nodes: int = 201, box=None):
    """Rows ``(xi1, xi2, density, member)`` over a regular 2-D grid."""
    if d.dimension != 2:
        raise DimensionError("contour export needs a two-factor density")
    box = box or d.quadrature_box()
    axes = [np.linspace(lo, hi, nodes) for lo, hi in box]
    values = d.grid_values(axes)
    rows = []
    for i, a in enumerate(axes[0]):
        for j, b in enumerate(axes[1]):
            p = float(values[i, j])
            rows.append((float(a), float(b), p, p >= alpha))
    return rows

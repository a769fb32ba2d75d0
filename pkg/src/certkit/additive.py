"""Additive models ``f(x) = c + sum_j g_j(x_j)`` with exact univariate certificates.

Components are piecewise-linear or polynomials of degree at most three, so
integrals, extrema, slopes and monotonicity are all available in closed form.
Coordinates are 0-based.  The reference measure is uniform on a declared
interval per coordinate; a model is *centered* when every component has
mean zero under it, and centered representations are unique.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .bounds import BoxSet
from .network import DimensionMismatchError, Network
from .transport import RiskCertificate, shift_certificate

CENTER_TOL = 1e-9


class DomainError(ValueError):
    """An interval or box reaches outside a component's domain."""


class NonMonotoneError(ValueError):
    """A component changes direction on the requested interval."""

    def __init__(self, coordinate: int, witness: tuple[float, float]):
        self.coordinate = coordinate
        self.witness = witness
        super().__init__(
            f"component on coordinate {coordinate} is not monotone: slope is positive at "
            f"t={witness[0]!r} and negative at t={witness[1]!r}"
        )


class AdditiveFormatError(ValueError):
    """Malformed additive model file."""


class Direction(str, enum.Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    CONSTANT = "constant"


def _interval(interval) -> tuple[float, float]:
    lo, hi = (float(v) for v in interval)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"invalid interval [{lo}, {hi}]")
    return lo, hi


# -- components --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function through ``(knots[i], values[i])``.

    The domain is ``[knots[0], knots[-1]]``.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.knots, dtype=np.float64).ravel()
        v = np.array(self.values, dtype=np.float64).ravel()
        if t.size < 2 or t.shape != v.shape:
            raise ValueError("need at least two knots with one value each")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("knots and values must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knots must be strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "knots", t)
        object.__setattr__(self, "values", v)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def __call__(self, t) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=np.float64), self.knots, self.values)

    def _restrict(self, lo: float, hi: float):
        """Knots and values of the restriction to [lo, hi]."""
        inner = self.knots[(self.knots > lo) & (self.knots < hi)]
        t = np.concatenate([[lo], inner, [hi]]) if hi > lo else np.array([lo])
        return t, self(t)

    def _segment_slopes(self, lo: float, hi: float) -> np.ndarray:
        if hi == lo:
            return np.zeros(0)
        # a segment counts if it overlaps [lo, hi] with positive length
        mask = (self.knots[1:] > lo) & (self.knots[:-1] < hi)
        return self.slopes[mask]

    def mean(self, lo: float, hi: float) -> float:
        t, v = self._restrict(lo, hi)
        if hi == lo:
            return float(v[0])
        return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)) / (hi - lo))

    def lipschitz(self, lo: float, hi: float) -> float:
        s = self._segment_slopes(lo, hi)
        return float(np.max(np.abs(s))) if s.size else 0.0

    def extrema(self, lo: float, hi: float) -> tuple[float, float, float, float]:
        """``(min, argmin, max, argmax)``; ties go to the rightmost point."""
        t, v = self._restrict(lo, hi)
        imax = len(v) - 1 - int(np.argmax(v[::-1]))
        imin = len(v) - 1 - int(np.argmin(v[::-1]))
        return float(v[imin]), float(t[imin]), float(v[imax]), float(t[imax])

    def direction(self, lo: float, hi: float) -> tuple[Optional[Direction], Optional[tuple]]:
        s = self._segment_slopes(lo, hi)
        up, down = s > 0, s < 0
        if not up.any() and not down.any():
            return Direction.CONSTANT, None
        if not down.any():
            return Direction.INCREASING, None
        if not up.any():
            return Direction.DECREASING, None
        t, _ = self._restrict(lo, hi)
        mids = 0.5 * (t[1:] + t[:-1])
        return None, (float(mids[np.argmax(up)]), float(mids[np.argmax(down)]))

    def shifted(self, delta: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.knots, self.values + delta)

    def is_zero(self) -> bool:
        return not np.any(self.values)


@dataclass(frozen=True, eq=False)
class Polynomial:
    """``sum_i coeffs[i] * t**i`` on ``domain``, degree at most three."""

    coeffs: np.ndarray
    domain: tuple[float, float]

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64).ravel()
        if c.size == 0 or c.size > 4:
            raise ValueError("polynomial needs 1 to 4 coefficients (degree <= 3)")
        if not np.all(np.isfinite(c)):
            raise ValueError("polynomial coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "domain", _interval(self.domain))

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for c in self.coeffs[::-1]:  # Horner
            out = out * t + c
        return out

    def _deriv(self) -> np.ndarray:
        return self.coeffs[1:] * np.arange(1, self.coeffs.size)

    def _deriv_at(self, t) -> np.ndarray:
        d = self._deriv()
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for c in d[::-1]:
            out = out * t + c
        return out

    def _critical_points(self, lo: float, hi: float) -> np.ndarray:
        """Real roots of g' strictly inside (lo, hi)."""
        d = self._deriv()
        d = np.trim_zeros(d, "b")
        if d.size <= 1:
            return np.zeros(0)
        roots = np.roots(d[::-1])
        roots = roots[np.abs(roots.imag) <= 1e-12 * (1 + np.abs(roots.real))].real
        return np.sort(roots[(roots > lo) & (roots < hi)])

    def mean(self, lo: float, hi: float) -> float:
        if hi == lo:
            return float(self(lo))
        k = np.arange(1, self.coeffs.size + 1)
        # antiderivative difference divided by the length
        total = np.sum(self.coeffs * (hi ** k - lo ** k) / k)
        return float(total / (hi - lo))

    def lipschitz(self, lo: float, hi: float) -> float:
        d = self._deriv()
        if d.size == 0:
            return 0.0
        pts = [lo, hi]
        if d.size == 3 and d[2] != 0:
            vertex = -d[1] / (2 * d[2])  # extremum of the quadratic g'
            if lo < vertex < hi:
                pts.append(vertex)
        return float(np.max(np.abs(self._deriv_at(np.array(pts)))))

    def extrema(self, lo: float, hi: float) -> tuple[float, float, float, float]:
        t = np.concatenate([[lo], self._critical_points(lo, hi), [hi]])
        v = self(t)
        imax = len(v) - 1 - int(np.argmax(v[::-1]))
        imin = len(v) - 1 - int(np.argmin(v[::-1]))
        return float(v[imin]), float(t[imin]), float(v[imax]), float(t[imax])

    def direction(self, lo: float, hi: float) -> tuple[Optional[Direction], Optional[tuple]]:
        d = self._deriv()
        if not np.any(d) or hi == lo:
            return Direction.CONSTANT, None
        # g' is at most quadratic: its sign pattern is fixed between its roots
        cuts = np.concatenate([[lo], self._critical_points(lo, hi), [hi]])
        mids = 0.5 * (cuts[1:] + cuts[:-1])
        signs = self._deriv_at(mids)
        up, down = signs > 0, signs < 0
        if not down.any():
            return (Direction.INCREASING if up.any() else Direction.CONSTANT), None
        if not up.any():
            return Direction.DECREASING, None
        return None, (float(mids[np.argmax(up)]), float(mids[np.argmax(down)]))

    def shifted(self, delta: float) -> "Polynomial":
        c = self.coeffs.copy()
        c[0] += delta
        return Polynomial(c, self.domain)

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


Component = Union[PiecewiseLinear, Polynomial]


def _in_domain(g: Component, interval) -> tuple[float, float]:
    lo, hi = _interval(interval)
    dlo, dhi = g.domain
    if lo < dlo or hi > dhi:
        raise DomainError(f"interval [{lo}, {hi}] is outside the domain [{dlo}, {dhi}]")
    return lo, hi


def component_integral(g: Component, interval) -> float:
    """Mean of ``g`` under the uniform probability measure on the interval."""
    return g.mean(*_in_domain(g, interval))


def component_lipschitz(g: Component, interval) -> float:
    """Exact ``sup |g'|`` on the interval."""
    return g.lipschitz(*_in_domain(g, interval))


def component_extrema(g: Component, interval) -> tuple[float, float]:
    """Exact ``(min, max)`` of ``g`` on the interval."""
    vmin, _, vmax, _ = g.extrema(*_in_domain(g, interval))
    return vmin, vmax


# -- models ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdditiveModel:
    constant: float
    components: tuple[tuple[int, Component], ...]
    dim: int
    reference: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if not math.isfinite(self.constant):
            raise ValueError("constant must be finite")
        ref = tuple(_interval(r) for r in self.reference)
        if len(ref) != self.dim:
            raise DimensionMismatchError(f"{len(ref)} reference intervals for dimension {self.dim}")
        comps = tuple(sorted(((int(j), g) for j, g in self.components), key=lambda p: p[0]))
        seen = [j for j, _ in comps]
        if len(set(seen)) != len(seen):
            raise ValueError("component coordinates must be distinct")
        for j, g in comps:
            if not 0 <= j < self.dim:
                raise DimensionMismatchError(f"component coordinate {j} outside 0..{self.dim - 1}")
            try:
                _in_domain(g, ref[j])
            except DomainError:
                raise DomainError(f"component {j} does not cover its reference interval") from None
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "reference", ref)

    @property
    def sparsity(self) -> int:
        return sum(1 for _, g in self.components if not g.is_zero())

    def component(self, j: int) -> Optional[Component]:
        for k, g in self.components:
            if k == j:
                return g
        return None

    def means(self) -> dict[int, float]:
        return {j: g.mean(*self.reference[j]) for j, g in self.components}

    @property
    def centered(self) -> bool:
        return all(abs(v) <= CENTER_TOL for v in self.means().values())

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatchError(f"input has length {x.shape[-1]}, model expects {self.dim}")
        out = np.full(x.shape[:-1], self.constant)
        for j, g in self.components:
            out = out + g(x[..., j])
        return out


def _box_intervals(m: AdditiveModel, box: BoxSet) -> list[tuple[float, float]]:
    if box.dim != m.dim:
        raise DimensionMismatchError(f"box has dim {box.dim}, model has {m.dim}")
    return [(float(a), float(b)) for a, b in zip(box.lo, box.hi)]


def center_model(m: AdditiveModel) -> AdditiveModel:
    """Move every component's reference mean into the constant."""
    means = m.means()
    comps = tuple((j, g.shifted(-means[j])) for j, g in m.components)
    return AdditiveModel(m.constant + sum(means.values()), comps, m.dim, m.reference)


def additive_lipschitz_l1(m: AdditiveModel, box: BoxSet) -> float:
    """``sum_j Lip(g_j)``: a Lipschitz bound for ``f`` w.r.t. the l1 input norm."""
    iv = _box_intervals(m, box)
    return float(sum(component_lipschitz(g, iv[j]) for j, g in m.components))


def product_sup_inf(m: AdditiveModel, box: BoxSet) -> tuple[float, float]:
    """Exact ``(inf, sup)`` of ``f`` over the box, one coordinate at a time."""
    iv = _box_intervals(m, box)
    lo = hi = m.constant
    for j, g in m.components:
        vmin, vmax = component_extrema(g, iv[j])
        lo += vmin
        hi += vmax
    return float(lo), float(hi)


def product_argmax(m: AdditiveModel, box: BoxSet) -> np.ndarray:
    """A maximizer of ``f`` over the box (rightmost per coordinate on ties)."""
    iv = _box_intervals(m, box)
    x = np.array([b for _, b in iv])
    for j, g in m.components:
        x[j] = g.extrema(*_in_domain(g, iv[j]))[3]
    return x


@dataclass(frozen=True)
class MonotoneCertificate:
    vertex: np.ndarray
    value: float
    directions: tuple[tuple[int, Direction], ...]


def monotone_endpoint_certificate(m: AdditiveModel, box: BoxSet) -> MonotoneCertificate:
    """Maximize a monotone additive model over a box by picking one endpoint per coordinate.

    Increasing and constant components (and coordinates without a component)
    take the right endpoint, decreasing ones the left.
    """
    iv = _box_intervals(m, box)
    vertex = np.array([b for _, b in iv])
    directions = []
    value = m.constant
    for j, g in m.components:
        lo, hi = _in_domain(g, iv[j])
        d, witness = g.direction(lo, hi)
        if d is None:
            raise NonMonotoneError(j, witness)
        directions.append((j, d))
        vertex[j] = lo if d is Direction.DECREASING else hi
        value += float(g(vertex[j]))
    return MonotoneCertificate(vertex, float(value), tuple(directions))


@dataclass(frozen=True)
class IdentifiabilityResidual:
    const_diff: float
    max_component_diff: float


def _check_comparable(a: AdditiveModel, b: AdditiveModel) -> None:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions differ: {a.dim} vs {b.dim}")
    if a.reference != b.reference:
        raise DimensionMismatchError("reference intervals differ")


def _component_grid_diffs(a: AdditiveModel, b: AdditiveModel, grid_per_dim: int):
    if grid_per_dim < 2:
        raise ValueError("grid_per_dim must be at least 2")
    for j in sorted({j for j, _ in a.components} | {j for j, _ in b.components}):
        t = np.linspace(*a.reference[j], grid_per_dim)
        ga, gb = a.component(j), b.component(j)
        va = ga(t) if ga is not None else np.zeros_like(t)
        vb = gb(t) if gb is not None else np.zeros_like(t)
        yield j, va - vb


def identifiability_residual(a: AdditiveModel, b: AdditiveModel, grid_per_dim: int = 100) -> IdentifiabilityResidual:
    """How far two centered representations are from being the same one.

    Missing components count as zero.  Both models must be centered.
    """
    _check_comparable(a, b)
    if not (a.centered and b.centered):
        raise ValueError("both models must be centered; apply center_model first")
    diff = max((float(np.max(np.abs(d))) for _, d in _component_grid_diffs(a, b, grid_per_dim)),
               default=0.0)
    return IdentifiabilityResidual(abs(a.constant - b.constant), diff)


def max_function_gap(a: AdditiveModel, b: AdditiveModel, grid_per_dim: int = 100) -> float:
    """``max |f_a - f_b|`` over the full product grid of the reference box.

    The difference is itself additive, so the product-grid maximum is found
    coordinate by coordinate without enumerating ``grid_per_dim ** d`` points.
    """
    _check_comparable(a, b)
    hi = lo = a.constant - b.constant
    for _, d in _component_grid_diffs(a, b, grid_per_dim):
        hi += float(np.max(d))
        lo += float(np.min(d))
    return max(abs(hi), abs(lo))


def additive_shift_certificate(m: AdditiveModel, box: BoxSet, rho: float, l_loss: float,
                               train_risk: float = 0.0,
                               covariate_shift_assumed: bool = True) -> RiskCertificate:
    """Shift-risk certificate with sensitivity ``l_loss * sum_j Lip(g_j)``.

    ``rho`` must bound the W1 distance measured with the l1 metric on inputs.
    """
    if not m.centered:
        raise ValueError("the model must be centered; apply center_model first")
    iv = _box_intervals(m, box)
    parts = tuple((j, component_lipschitz(g, iv[j])) for j, g in m.components)
    l_f = float(sum(lj for _, lj in parts))
    return shift_certificate(train_risk, rho, l_loss, l_f, covariate_shift_assumed, parts)


# -- exact ReLU realization --------------------------------------------------

def additive_to_network(m: AdditiveModel) -> Network:
    """A one-hidden-layer ReLU network equal to a piecewise-linear model on its domain.

    Each component becomes ``v0 + s0 * relu(t - t0) + sum_k (s_k - s_{k-1}) relu(t - t_k)``.
    """
    rows, biases, out = [], [], []
    const = m.constant
    for j, g in m.components:
        if not isinstance(g, PiecewiseLinear):
            raise TypeError("only piecewise-linear components have an exact ReLU form")
        s = g.slopes
        coefs = np.concatenate([[s[0]], np.diff(s)])
        const += float(g.values[0])
        for t, c in zip(g.knots[:-1], coefs):
            e = np.zeros(m.dim)
            e[j] = 1.0
            rows.append(e)
            biases.append(-float(t))
            out.append(float(c))
    if not rows:
        return Network.from_arrays([np.zeros((1, m.dim))], [np.array([const])])
    return Network.from_arrays([np.array(rows), np.array([out])],
                               [np.array(biases), np.array([const])])


# -- text format -------------------------------------------------------------

_HEADER = "additive v1"


def parse_additive(text: str) -> AdditiveModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise AdditiveFormatError(f"first line must be '{_HEADER}'")

    def fields(i, key, n=None):
        if i >= len(lines):
            raise AdditiveFormatError(f"expected '{key} ...' at end of file")
        parts = lines[i].split()
        if parts[0] != key or (n is not None and len(parts) != n + 1):
            raise AdditiveFormatError(f"line {i + 1}: expected '{key}' with {n} values, got {lines[i]!r}")
        return parts[1:]

    try:
        dim = int(fields(1, "dim", 1)[0])
        const = float(fields(2, "const", 1)[0])
        ref: dict[int, tuple[float, float]] = {}
        pos = 3
        while pos < len(lines) and lines[pos].startswith("ref "):
            j, lo, hi = fields(pos, "ref", 3)
            ref[int(j)] = (float(lo), float(hi))
            pos += 1
        if sorted(ref) != list(range(dim)):
            raise AdditiveFormatError("need exactly one 'ref j lo hi' line per coordinate 0..dim-1")
        reference = tuple(ref[j] for j in range(dim))
        comps = []
        while pos < len(lines):
            kind = lines[pos].split()[0]
            if kind == "pwl":
                j, n = (int(v) for v in fields(pos, "pwl", 2))
                pts = [ln.split() for ln in lines[pos + 1:pos + 1 + n]]
                if len(pts) != n or any(len(p) != 2 for p in pts):
                    raise AdditiveFormatError(f"line {pos + 1}: expected {n} 't v' pairs")
                arr = np.array(pts, dtype=np.float64)
                comps.append((j, PiecewiseLinear(arr[:, 0], arr[:, 1])))
                pos += n + 1
            elif kind == "poly":
                parts = lines[pos].split()
                j, k = int(parts[1]), int(parts[2])
                if len(parts) != k + 4:
                    raise AdditiveFormatError(f"line {pos + 1}: 'poly j k' needs k+1 coefficients")
                if not 0 <= j < dim:
                    raise AdditiveFormatError(f"line {pos + 1}: coordinate {j} out of range")
                comps.append((j, Polynomial([float(c) for c in parts[3:]], reference[j])))
                pos += 1
            else:
                raise AdditiveFormatError(f"line {pos + 1}: unknown component kind {kind!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, AdditiveFormatError):
            raise
        raise AdditiveFormatError(str(exc)) from None
    return AdditiveModel(const, tuple(comps), dim, reference)


def load_additive(path) -> AdditiveModel:
    return parse_additive(Path(path).read_text())


def format_additive(m: AdditiveModel) -> str:
    out = [_HEADER, f"dim {m.dim}", f"const {m.constant!r}"]
    out += [f"ref {j} {lo!r} {hi!r}" for j, (lo, hi) in enumerate(m.reference)]
    for j, g in m.components:
        if isinstance(g, PiecewiseLinear):
            out.append(f"pwl {j} {g.knots.size}")
            out += [f"{t!r} {v!r}" for t, v in zip(g.knots.tolist(), g.values.tolist())]
        else:
            if g.domain != m.reference[j]:
                raise ValueError("the file format ties polynomial domains to the reference interval")
            out.append(f"poly {j} {g.degree} " + " ".join(repr(c) for c in g.coeffs.tolist()))
    return "\n".join(out) + "\n"


def save_additive(m: AdditiveModel, path) -> None:
    Path(path).write_text(format_additive(m))


def example_sparse_model(alpha: float = 1.0, beta: float = 0.5, constant: float = 0.0,
                         dim: int = 5) -> AdditiveModel:
    """``c + alpha * x_0 + beta * (x_2**2 - 1/3)`` on ``[-1, 1]**dim``, already centered."""
    ref = tuple((-1.0, 1.0) for _ in range(dim))
    comps = (
        (0, Polynomial([0.0, alpha], ref[0])),
        (2, Polynomial([-beta / 3.0, 0.0, beta], ref[2])),
    )
    return AdditiveModel(constant, tuple(comps), dim, ref)

"""Sound, incomplete bounds on linear output functionals over input boxes.

Two propagation schemes are provided:

* interval propagation (center/radius form), one forward sweep;
* backward linear propagation through the ReLU triangle relaxation.  Each
  ReLU with preactivation bounds ``[l, u]`` is sandwiched between two lines;
  the backward sweep picks the upper or lower line per neuron according to
  the sign of the coefficient it multiplies, then maximizes the resulting
  affine function of ``x`` in closed form over the box.

All returned bounds are padded outward by a small multiple of the machine
epsilon times the magnitude of the summed terms, so floating-point rounding
cannot push a bound to the wrong side of the true value.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .network import DimensionMismatchError, Network, evaluate
from .reports import format_record, parse_record, parse_vector

_EPS = np.finfo(np.float64).eps


class Method(str, enum.Enum):
    INTERVAL = "Interval"
    BACKWARD_LINEAR = "BackwardLinear"
    COMPLETE_BAB = "CompleteBaB"


class Verdict(str, enum.Enum):
    SAFE = "Safe"
    UNKNOWN = "Unknown"
    UNSAFE = "Unsafe"
    BUDGET = "Budget"


@dataclass(frozen=True, eq=False)
class BoxSet:
    """Axis-aligned box ``{x : lo <= x <= hi}``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.array(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.array(self.hi, dtype=np.float64))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise DimensionMismatchError(f"box bounds have shapes {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box has lo > hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, center, radius) -> "BoxSet":
        """The l-infinity ball ``||x - center||_inf <= radius``."""
        c = np.atleast_1d(np.asarray(center, dtype=np.float64))
        return cls(c - radius, c + radius)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def inner_radius(self) -> float:
        """Radius of the largest l-infinity ball inside the box."""
        return float(np.min(self.radius))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def split(self, axis: int) -> tuple["BoxSet", "BoxSet"]:
        mid = 0.5 * (self.lo[axis] + self.hi[axis])
        left_hi = self.hi.copy()
        left_hi[axis] = mid
        right_lo = self.lo.copy()
        right_lo[axis] = mid
        return BoxSet(self.lo, left_hi), BoxSet(right_lo, self.hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))


@dataclass(frozen=True, eq=False)
class LinearSpec:
    """The property ``a . f(x) <= beta`` for all x in the input set."""

    a: np.ndarray
    beta: float = 0.0

    def __post_init__(self):
        a = np.atleast_1d(np.array(self.a, dtype=np.float64))
        if a.ndim != 1 or not np.all(np.isfinite(a)) or not np.isfinite(self.beta):
            raise ValueError("spec coefficients must be a finite vector")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def logit_margin(cls, n_classes: int, target: int, other: int) -> "LinearSpec":
        """``f_other - f_target <= 0``: class ``target`` beats class ``other``."""
        if target == other:
            raise ValueError("margin needs two distinct classes")
        a = np.zeros(n_classes)
        a[other] = 1.0
        a[target] = -1.0
        return cls(a, 0.0)

    def value(self, net: Network, x) -> np.ndarray:
        """``a . f(x) - beta`` (the violation functional) at one point or a batch."""
        return evaluate(net, x) @ self.a - self.beta


@dataclass(frozen=True)
class PreactBounds:
    """Per-layer bounds on preactivations ``W_l z_{l-1} + b_l``.

    Entries follow the layer order.  :func:`interval_bounds` includes the
    output layer; :func:`bound_spec` records hidden layers only.
    """

    lower: tuple[np.ndarray, ...]
    upper: tuple[np.ndarray, ...]

    def hidden(self, net: Network) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(lo, hi) for lo, hi, layer in zip(self.lower, self.upper, net.layers)
                if layer.is_relu]

    def unstable_count(self, net: Network) -> int:
        return int(sum(np.count_nonzero((lo < 0) & (hi > 0)) for lo, hi in self.hidden(net)))

    def all_stable(self, net: Network) -> bool:
        return self.unstable_count(net) == 0


class Line(NamedTuple):
    slope: float
    intercept: float

    def __call__(self, s):
        return self.slope * s + self.intercept


@dataclass(frozen=True)
class Certificate:
    upper: float
    lower: float
    method: Method
    passes: int
    verdict: Verdict
    witness: Optional[np.ndarray] = None
    wall_ops: int = 0

    def record_fields(self) -> dict:
        return {
            "method": self.method,
            "K": self.passes,
            "upper": self.upper,
            "lower": self.lower,
            "verdict": self.verdict,
            "witness": self.witness,
            "wall_ops": self.wall_ops,
        }

    def to_record(self) -> str:
        return format_record(self.record_fields())

    @classmethod
    def from_record(cls, text: str) -> "Certificate":
        rec = parse_record(text)
        witness = parse_vector(rec["witness"]) if rec.get("witness") else None
        return cls(
            upper=float(rec["upper"]),
            lower=float(rec["lower"]),
            method=Method(rec["method"]),
            passes=int(rec["K"]),
            verdict=Verdict(rec["verdict"]),
            witness=witness,
            wall_ops=int(rec["wall_ops"]),
        )


class OpCounter:
    """Tally of arithmetic operations (multiply-adds and elementwise ops)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def _gamma(net: Network) -> float:
    # relative rounding allowance for one propagated bound
    return _EPS * (sum(net.dims) + 4 * len(net.layers) + 8)


def _check(net: Network, box: BoxSet, spec: Optional[LinearSpec] = None) -> None:
    if box.dim != net.input_dim:
        raise DimensionMismatchError(f"box has dim {box.dim}, network input is {net.input_dim}")
    if spec is not None and spec.a.shape[0] != net.output_dim:
        raise DimensionMismatchError(
            f"spec has {spec.a.shape[0]} coefficients, network output is {net.output_dim}"
        )


# -- ReLU relaxation ---------------------------------------------------------

def relu_triangle(lower: float, upper: float) -> tuple[Line, Line]:
    """Upper and lower lines sandwiching ``max(s, 0)`` on ``[lower, upper]``.

    Stable neurons get exact lines.  For an unstable neuron the upper line is
    the chord through ``(lower, 0)`` and ``(upper, upper)``; the lower line is
    ``s`` when ``upper >= -lower`` and ``0`` otherwise.
    """
    if lower > upper:
        raise ValueError("lower > upper")
    au, bu, al, bl = _relu_lines(np.array([lower], float), np.array([upper], float))
    return Line(float(au[0]), float(bu[0])), Line(float(al[0]), float(bl[0]))


def _relu_lines(lo: np.ndarray, hi: np.ndarray):
    active = lo >= 0
    unstable = (lo < 0) & (hi > 0)
    au = np.where(active, 1.0, 0.0)
    bu = np.zeros_like(lo)
    al = au.copy()
    if np.any(unstable):
        lu, hu = lo[unstable], hi[unstable]
        width = hu - lu
        au[unstable] = hu / width
        # chord intercept, rounded up so the line stays above the ReLU
        bu[unstable] = np.nextafter(-lu * hu / width, np.inf)
        al[unstable] = np.where(hu >= -lu, 1.0, 0.0)
    bl = np.zeros_like(lo)
    return au, bu, al, bl


# -- interval propagation ----------------------------------------------------

def _interval_layer(layer, lo, hi, counter):
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    absw = np.abs(layer.weight)
    c = layer.weight @ mid + layer.bias
    r = absw @ rad
    pad = (layer.in_dim + 4) * _EPS * (absw @ (np.abs(mid) + rad) + np.abs(layer.bias))
    if counter is not None:
        counter.add(2 * layer.weight.size + 4 * layer.out_dim + 2 * layer.in_dim)
    return c - r - pad, c + r + pad


def _post(layer, lo, hi):
    if layer.is_relu:
        return np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return lo, hi


def interval_bounds(net: Network, box: BoxSet, counter: Optional[OpCounter] = None) -> PreactBounds:
    """Interval bounds on every layer's preactivations over the box."""
    _check(net, box)
    lo, hi = box.lo, box.hi
    lowers, uppers = [], []
    for layer in net.layers:
        s_lo, s_hi = _interval_layer(layer, lo, hi, counter)
        lowers.append(s_lo)
        uppers.append(s_hi)
        lo, hi = _post(layer, s_lo, s_hi)
    return PreactBounds(tuple(lowers), tuple(uppers))


# -- backward linear propagation ---------------------------------------------

@dataclass
class _Linear:
    """Affine bound ``coef . x + const`` valid over the box, plus magnitude for padding."""

    coef: np.ndarray
    const: np.ndarray
    mag: np.ndarray

    def concretize(self, box: BoxSet, upper: bool, gamma: float):
        c, r = box.center, box.radius
        spread = np.abs(self.coef) @ r
        mag = np.abs(self.coef) @ (np.abs(c) + r) + self.mag
        value = self.coef @ c + self.const
        if upper:
            return value + spread + gamma * mag
        return value - spread - gamma * mag


def _backward(net: Network, top: int, C: np.ndarray, lowers, uppers, counter):
    """Back-substitute ``C @ s_top`` to the input through layers ``top-1 .. 0``.

    Returns (upper bound form, lower bound form) as affine functions of x.
    ``lowers``/``uppers`` must hold preactivation bounds for layers < top.
    """
    layer = net.layers[top]
    lam_u = C @ layer.weight
    lam_l = lam_u.copy()
    const_u = C @ layer.bias
    const_l = const_u.copy()
    mag_u = np.abs(C) @ np.abs(layer.bias)
    mag_l = mag_u.copy()
    ops = 2 * C.shape[0] * layer.weight.size + 2 * C.size

    for idx in range(top - 1, -1, -1):
        layer = net.layers[idx]
        if layer.is_relu:
            au, bu, al, bl = _relu_lines(lowers[idx], uppers[idx])
            # upper bound: positive coefficients take the upper line (ties too)
            take_up = lam_u >= 0
            slope = np.where(take_up, au, al)
            icpt = np.where(take_up, bu, bl)
            const_u = const_u + np.sum(lam_u * icpt, axis=-1)
            mag_u = mag_u + np.sum(np.abs(lam_u * icpt), axis=-1)
            lam_u = lam_u * slope
            # lower bound: positive coefficients take the lower line
            take_up = lam_l <= 0
            slope = np.where(take_up, au, al)
            icpt = np.where(take_up, bu, bl)
            const_l = const_l + np.sum(lam_l * icpt, axis=-1)
            mag_l = mag_l + np.sum(np.abs(lam_l * icpt), axis=-1)
            lam_l = lam_l * slope
            ops += 10 * lam_u.size
        const_u = const_u + lam_u @ layer.bias
        const_l = const_l + lam_l @ layer.bias
        mag_u = mag_u + np.abs(lam_u) @ np.abs(layer.bias)
        mag_l = mag_l + np.abs(lam_l) @ np.abs(layer.bias)
        lam_u = lam_u @ layer.weight
        lam_l = lam_l @ layer.weight
        ops += 2 * lam_u.shape[0] * layer.weight.size + 4 * lam_u.shape[0] * layer.out_dim

    if counter is not None:
        counter.add(ops)
    return _Linear(lam_u, const_u, mag_u), _Linear(lam_l, const_l, mag_l)


@dataclass
class SpecBound:
    """Everything computed while bounding one spec over one box."""

    upper: float
    lower: float
    upper_form: _Linear
    lower_form: _Linear
    preact: PreactBounds
    passes: int
    ops: int

    def upper_vertex(self, box: BoxSet) -> np.ndarray:
        """Box vertex maximizing the linear upper-bound form (ties to hi)."""
        return np.where(self.upper_form.coef >= 0, box.hi, box.lo)


def bound_spec(net: Network, box: BoxSet, spec: LinearSpec, intermediate: str = "backward",
               counter: Optional[OpCounter] = None) -> SpecBound:
    """Core of :func:`linear_output_bounds`, exposing the linear forms.

    ``intermediate="backward"`` tightens every hidden layer past the first
    with its own backward pass (intersected with interval bounds);
    ``"interval"`` uses interval bounds only, which keeps the cost at a fixed
    number of sweeps over the weights.
    """
    _check(net, box, spec)
    if intermediate not in ("backward", "interval"):
        raise ValueError(f"unknown intermediate mode {intermediate!r}")
    local = OpCounter()
    gamma = _gamma(net)
    L = len(net.layers)

    # pass 1: plain interval sweep; the result is never looser than this
    plain = interval_bounds(net, box, local)
    plain_up, plain_dn = _interval_spec(net, box, plain, spec, gamma, local)
    passes = 1

    lowers = list(plain.lower[:L - 1])
    uppers = list(plain.upper[:L - 1])
    if intermediate == "backward" and L > 2:
        lo, hi = _post(net.layers[0], lowers[0], uppers[0])
        for idx in range(1, L - 1):
            layer = net.layers[idx]
            s_lo, s_hi = _interval_layer(layer, lo, hi, local)
            s_lo = np.maximum(s_lo, lowers[idx])
            s_hi = np.minimum(s_hi, uppers[idx])
            if layer.is_relu:
                up, dn = _backward(net, idx, np.eye(layer.out_dim), lowers, uppers, local)
                s_hi = np.minimum(s_hi, up.concretize(box, True, gamma))
                s_lo = np.maximum(s_lo, dn.concretize(box, False, gamma))
                passes += 1
            lowers[idx], uppers[idx] = s_lo, s_hi
            lo, hi = _post(layer, s_lo, s_hi)
    tight = PreactBounds(tuple(lowers), tuple(uppers))  # hidden layers only
    tight_up, tight_dn = _interval_spec(net, box, tight, spec, gamma, local)

    up_form, dn_form = _backward(net, L - 1, spec.a[None, :], lowers, uppers, local)
    passes += 1
    back_up = float(up_form.concretize(box, True, gamma)[0]) - spec.beta
    back_dn = float(dn_form.concretize(box, False, gamma)[0]) - spec.beta
    upper = min(back_up, tight_up, plain_up)
    lower = max(back_dn, tight_dn, plain_dn)
    up_form = _Linear(up_form.coef[0], float(up_form.const[0]), float(up_form.mag[0]))
    dn_form = _Linear(dn_form.coef[0], float(dn_form.const[0]), float(dn_form.mag[0]))

    if counter is not None:
        counter.add(local.count)
    return SpecBound(upper, lower, up_form, dn_form, tight, passes, local.count)


def _interval_spec(net, box, pre: PreactBounds, spec, gamma, counter) -> tuple[float, float]:
    """Interval bracket on ``a . f - beta`` from the last hidden layer's bounds."""
    L = len(net.layers)
    if L == 1:
        lo, hi = box.lo, box.hi
    else:
        lo, hi = _post(net.layers[L - 2], pre.lower[L - 2], pre.upper[L - 2])
    last = net.layers[-1]
    g = spec.a @ last.weight
    g0 = float(spec.a @ last.bias)
    mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
    mag = float(np.abs(g) @ (np.abs(mid) + rad) + np.abs(spec.a) @ np.abs(last.bias))
    base = float(g @ mid) + g0 - spec.beta
    spread = float(np.abs(g) @ rad)
    counter.add(last.weight.size + 4 * last.in_dim)
    return base + spread + gamma * mag, base - spread - gamma * mag


def _verdict(net, box, spec, upper, lower, counter):
    if upper <= 0:
        return Verdict.SAFE, None
    if lower > 0:
        # every point violates; the center is a concrete witness
        x = box.center
        if counter is not None:
            counter.add(sum(layer.weight.size for layer in net.layers))
        if float(spec.value(net, x)[()]) > 0:
            return Verdict.UNSAFE, x
    return Verdict.UNKNOWN, None


def linear_output_bounds(net: Network, box: BoxSet, spec: LinearSpec,
                         intermediate: str = "backward") -> Certificate:
    """Certified bracket on ``a . f(x) - beta`` over the box via the triangle relaxation.

    ``upper`` bounds the supremum (the violation value) and ``lower`` bounds
    the infimum.  The backward result is intersected with the interval
    result, so it is never looser than :func:`interval_output_bounds`.
    """
    counter = OpCounter()
    sb = bound_spec(net, box, spec, intermediate, counter)
    verdict, witness = _verdict(net, box, spec, sb.upper, sb.lower, counter)
    return Certificate(sb.upper, sb.lower, Method.BACKWARD_LINEAR, sb.passes,
                       verdict, witness, counter.count)


def interval_output_bounds(net: Network, box: BoxSet, spec: LinearSpec) -> Certificate:
    """Same bracket using interval arithmetic alone."""
    _check(net, box, spec)
    counter = OpCounter()
    gamma = _gamma(net)
    pre = interval_bounds(net, box, counter)
    upper, lower = _interval_spec(net, box, pre, spec, gamma, counter)
    verdict, witness = _verdict(net, box, spec, upper, lower, counter)
    return Certificate(upper, lower, Method.INTERVAL, 1, verdict, witness, counter.count)


def margin_certificates(net: Network, box: BoxSet, target: int, threads: int = 1,
                        intermediate: str = "backward") -> dict[int, Certificate]:
    """One certificate per ``k != target`` for the claim "class target wins on the box"."""
    n = net.output_dim
    if not 0 <= target < n:
        raise ValueError(f"target class {target} out of range for {n} outputs")
    others = [k for k in range(n) if k != target]
    specs = [LinearSpec.logit_margin(n, target, k) for k in others]

    def one(spec):
        return linear_output_bounds(net, box, spec, intermediate)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            certs = list(pool.map(one, specs))
    else:
        certs = [one(s) for s in specs]
    return dict(zip(others, certs))


def oscillation(net: Network, box: BoxSet, spec: LinearSpec) -> float:
    """Certified upper bound on ``sup a.f - inf a.f`` over the box."""
    cert = linear_output_bounds(net, box, spec)
    return max(cert.upper - cert.lower, 0.0)


def local_lipschitz_surrogate(osc: float, r: float) -> float:
    """Slope bound ``osc / r`` for a set containing a ball of radius ``r``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    if osc < 0:
        raise ValueError("oscillation must be nonnegative")
    return osc / r

"""Complete verification by input-domain branch and bound, plus exact 1-D oracles.

Also home to two constructions that show where certification gets hard:
the tent-map sawtooth family (2^k affine pieces from k levels) and a narrow
ReLU bump on which random sampling almost always misses the violation.
"""

from __future__ import annotations

import heapq
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bounds import BoxSet, LinearSpec, Verdict, bound_spec, _check
from .network import Activation, AffineLayer, DimensionMismatchError, Network, evaluate
from .reports import format_record

SAWTOOTH_MAX_K = 20


@dataclass(frozen=True)
class BabResult:
    """Outcome of :func:`verify_complete`.

    ``lower``/``upper`` bracket the violation value ``sup a.f(x) - beta``.
    ``lower`` is always attained by a concrete evaluated point.
    """

    verdict: Verdict
    lower: float
    upper: float
    nodes_expanded: int
    witness: Optional[np.ndarray] = None
    history: tuple = ()

    @property
    def bound_pair(self) -> tuple[float, float]:
        return self.lower, self.upper

    def record_fields(self) -> dict:
        return {
            "method": "CompleteBaB",
            "verdict": self.verdict,
            "lower": self.lower,
            "upper": self.upper,
            "nodes_expanded": self.nodes_expanded,
            "witness": self.witness,
        }

    def to_record(self) -> str:
        return format_record(self.record_fields())


@dataclass
class _Node:
    box: BoxSet
    upper: float
    best: float
    best_x: np.ndarray
    settled: bool


def _process(net, box, spec, parent_upper, gap_tol, intermediate) -> _Node:
    sb = bound_spec(net, box, spec, intermediate)
    upper = min(sb.upper, parent_upper)
    vertex = sb.upper_vertex(box)
    cands = np.stack([vertex, box.center])
    vals = spec.value(net, cands)
    i = int(np.argmax(vals))
    best = float(vals[i])
    # all ReLUs fixed: f is affine on the box and the vertex value is its exact max
    settled = sb.preact.all_stable(net) or upper - best <= gap_tol
    return _Node(box, upper, best, cands[i], settled)


def verify_complete(net: Network, box: BoxSet, spec: LinearSpec, node_budget: int = 100_000,
                    gap_tol: float = 1e-9, threads: int = 1, record_history: bool = False,
                    intermediate: str = "backward") -> BabResult:
    """Decide ``a.f(x) <= beta`` on the box by best-first domain splitting.

    Each sub-box is bounded with the backward linear relaxation.  The box
    with the largest certified upper bound is split at the midpoint of its
    widest coordinate (lowest index on ties; oldest node on equal bounds).
    A sub-box whose ReLUs are all stable, or whose bound gap is below
    ``gap_tol``, is not split further.  ``nodes_expanded`` counts bounded
    boxes, the root included.

    With ``threads > 1`` up to ``threads`` nodes are split per round and their
    children bounded concurrently; the verdict and bracket remain sound but
    ``nodes_expanded`` can differ from the sequential run.
    """
    _check(net, box, spec)
    if node_budget < 1:
        raise ValueError("node_budget must be at least 1")
    if not gap_tol > 0:
        raise ValueError("gap_tol must be positive")
    if threads < 1:
        raise ValueError("threads must be at least 1")

    order = itertools.count()
    heap: list = []
    closed_upper = -np.inf
    best, best_x = -np.inf, None
    nodes = 0
    history = []

    def global_upper():
        top = -heap[0][0] if heap else -np.inf
        return max(top, closed_upper)

    def absorb(node: _Node):
        nonlocal closed_upper, best, best_x
        if node.best > best:
            best, best_x = node.best, node.best_x
        if node.upper <= 0 or node.settled:
            closed_upper = max(closed_upper, node.upper)
        else:
            heapq.heappush(heap, (-node.upper, next(order), node))

    def result(verdict):
        witness = best_x if verdict is Verdict.UNSAFE else None
        return BabResult(verdict, best, global_upper(), nodes, witness, tuple(history))

    absorb(_process(net, box, spec, np.inf, gap_tol, intermediate))
    nodes = 1
    if record_history:
        history.append((nodes, best, global_upper()))

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while True:
            if best > 0:
                return result(Verdict.UNSAFE)
            if not heap:
                return result(Verdict.SAFE if closed_upper <= 0 else Verdict.BUDGET)
            if nodes + 2 > node_budget:
                return result(Verdict.BUDGET)

            batch = []
            while heap and len(batch) < threads and nodes + 2 * (len(batch) + 1) <= node_budget:
                batch.append(heapq.heappop(heap)[2])
            jobs = []
            for parent in batch:
                axis = int(np.argmax(parent.box.hi - parent.box.lo))
                for child in parent.box.split(axis):
                    jobs.append((child, parent.upper))
            if pool is None:
                children = [_process(net, b, spec, u, gap_tol, intermediate) for b, u in jobs]
            else:
                children = list(pool.map(
                    lambda job: _process(net, job[0], spec, job[1], gap_tol, intermediate), jobs))
            for child in children:
                absorb(child)
            nodes += len(children)
            # snapshot only once every split region is back in the frontier
            if record_history:
                history.append((nodes, best, global_upper()))
    finally:
        if pool is not None:
            pool.shutdown()


# -- exact 1-D piece enumeration ---------------------------------------------

@dataclass(frozen=True)
class Pieces1D:
    """Exact affine decomposition of a scalar-input network on an interval.

    ``knots`` are the interval endpoints plus every interior breakpoint;
    ``values[i]`` is ``f(knots[i])``.  On each ``[knots[i], knots[i+1]]`` the
    function is affine.
    """

    knots: np.ndarray
    values: np.ndarray

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knots[1:-1]

    @property
    def n_pieces(self) -> int:
        return len(self.knots) - 1

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values, axis=0) / np.diff(self.knots)[:, None]

    @property
    def intercepts(self) -> np.ndarray:
        return self.values[:-1] - self.slopes * self.knots[:-1, None]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.stack([np.interp(x, self.knots, self.values[:, j])
                         for j in range(self.values.shape[1])], axis=-1)

    def spec_max(self, spec: LinearSpec) -> tuple[float, float]:
        """Exact ``max a.f(x) - beta`` over the interval and a maximizer."""
        vals = self.values @ spec.a - spec.beta
        i = int(np.argmax(vals))
        return float(vals[i]), float(self.knots[i])

    def spec_min(self, spec: LinearSpec) -> tuple[float, float]:
        vals = self.values @ spec.a - spec.beta
        i = int(np.argmin(vals))
        return float(vals[i]), float(self.knots[i])


def enumerate_pieces_1d(net: Network, interval: BoxSet, merge: bool = True,
                        slope_tol: float = 1e-9) -> Pieces1D:
    """Propagate breakpoints layer by layer to get ``f`` exactly on the interval.

    Every ReLU whose preactivation changes sign inside a segment adds the
    zero crossing as a new knot; preactivations at new knots are obtained by
    linear interpolation, which is exact because all earlier layers are
    affine on the segment.  With ``merge`` knots where no output slope
    changes are dropped.
    """
    if net.input_dim != 1:
        raise DimensionMismatchError("piece enumeration needs a 1-input network")
    if interval.dim != 1:
        raise DimensionMismatchError("interval must be one-dimensional")
    lo, hi = float(interval.lo[0]), float(interval.hi[0])
    if lo == hi:
        return Pieces1D(np.array([lo]), np.atleast_2d(net([lo])))

    xs = np.array([lo, hi])
    z = xs[:, None]
    for layer in net.layers:
        s = z @ layer.weight.T + layer.bias
        if layer.is_relu:
            xs, s = _insert_crossings(xs, s)
            z = np.maximum(s, 0.0)
        else:
            z = s
    # exact network values at the knots (interpolated values can differ in the last bits)
    values = evaluate(net, xs[:, None])
    if merge:
        xs, values = _merge_collinear(xs, values, slope_tol)
    return Pieces1D(xs, values)


def _insert_crossings(xs, s):
    s0, s1 = s[:-1], s[1:]
    cross = ((s0 < 0) & (s1 > 0)) | ((s0 > 0) & (s1 < 0))
    seg, unit = np.nonzero(cross)
    if seg.size == 0:
        return xs, s
    t = s0[seg, unit] / (s0[seg, unit] - s1[seg, unit])
    new_x = xs[seg] + t * (xs[seg + 1] - xs[seg])
    new_s = s0[seg] + t[:, None] * (s1[seg] - s0[seg])
    new_s[np.arange(seg.size), unit] = 0.0

    all_x = np.concatenate([xs, new_x])
    all_s = np.concatenate([s, new_s])
    order = np.argsort(all_x, kind="stable")
    all_x, all_s = all_x[order], all_s[order]
    keep = np.concatenate([[True], np.diff(all_x) > 0])
    if not keep[-1]:
        # never drop the right endpoint
        keep[-1] = True
        keep[np.flatnonzero(keep[:-1])[-1]] = all_x[np.flatnonzero(keep[:-1])[-1]] != all_x[-1]
    return all_x[keep], all_s[keep]


def _merge_collinear(xs, values, tol):
    if len(xs) <= 2:
        return xs, values
    slopes = np.diff(values, axis=0) / np.diff(xs)[:, None]
    change = np.abs(slopes[1:] - slopes[:-1]) > tol * (1.0 + np.abs(slopes[1:]) + np.abs(slopes[:-1]))
    keep = np.concatenate([[True], np.any(change, axis=1), [True]])
    return xs[keep], values[keep]


# -- sawtooth barrier family -------------------------------------------------

def make_sawtooth(k: int) -> Network:
    """k-fold composition of the tent map ``T(x) = 2 relu(x) - 4 relu(x - 1/2)``.

    On [0, 1] the result has exactly 2^k affine pieces with breakpoints at
    ``j / 2^k`` and peaks of height 1 at odd multiples of ``1 / 2^k``.  Each
    level uses two ReLUs; the first is stably active on [0, 1], so only k
    units are ambiguous.
    """
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= SAWTOOTH_MAX_K:
        raise ValueError(f"k must be an integer in [1, {SAWTOOTH_MAX_K}]")
    relu = Activation.RELU
    layers = [AffineLayer(np.array([[1.0], [1.0]]), np.array([0.0, -0.5]), relu)]
    for _ in range(k - 1):
        layers.append(AffineLayer(np.array([[2.0, -4.0], [2.0, -4.0]]), np.array([0.0, -0.5]), relu))
    layers.append(AffineLayer(np.array([[2.0, -4.0]]), np.array([0.0]), Activation.IDENTITY))
    return Network(tuple(layers))


def tent_iterate(x, k: int) -> np.ndarray:
    """Closed-form reference: ``T^k(x)`` with ``T(x) = 1 - |2x - 1|`` on [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    for _ in range(k):
        x = 1.0 - np.abs(2.0 * x - 1.0)
    return x


# -- sampling attacks --------------------------------------------------------

def sampling_attack(net: Network, box: BoxSet, spec: LinearSpec, n_samples: int,
                    seed: int | tuple = 0) -> Optional[np.ndarray]:
    """Uniform random search; returns the first sampled violating point or None."""
    _check(net, box, spec)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    xs = box.sample(rng, n_samples)
    hits = np.flatnonzero(spec.value(net, xs) > 0)
    return xs[hits[0]] if hits.size else None


BUMP_LEVEL = 0.5


def make_bump(epsilon: float, delta: float | None = None) -> Network:
    """Trapezoid with ramps of width ``delta`` centred on 0 and on ``eps``.

    It is 1 on [delta/2, eps - delta/2], 0 outside [-delta/2, eps + delta/2],
    and crosses :data:`BUMP_LEVEL` exactly at 0 and ``eps``, so
    ``{x : f(x) > 1/2} = (0, eps)``.  Thresholding at 1/2 rather than 0 keeps
    the violating set immune to rounding noise in the cancelling ReLU terms.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    delta = epsilon / 100 if delta is None else delta
    if not 0 < delta <= epsilon:
        raise ValueError("delta must lie in (0, epsilon]")
    h = 0.5 * delta
    w1 = np.ones((4, 1))
    b1 = np.array([h, -h, -(epsilon - h), -(epsilon + h)])
    w2 = np.array([[1.0, -1.0, -1.0, 1.0]]) / delta
    return Network.from_arrays([w1, w2], [b1, np.zeros(1)])


@dataclass(frozen=True)
class AttackReport:
    n_trials: int
    n_missed: int
    epsilon: float
    n_samples_per_trial: int
    predicted_miss_prob: float

    @property
    def empirical_miss_rate(self) -> float:
        return self.n_missed / self.n_trials

    @property
    def standard_error(self) -> float:
        p = self.predicted_miss_prob
        return float(np.sqrt(p * (1 - p) / self.n_trials))

    def record_fields(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_missed": self.n_missed,
            "epsilon": self.epsilon,
            "n_samples_per_trial": self.n_samples_per_trial,
            "predicted_miss_prob": self.predicted_miss_prob,
            "empirical_miss_rate": self.empirical_miss_rate,
        }


def attack_gap_experiment(epsilon: float, n_samples: int, n_trials: int, seed: int = 0) -> AttackReport:
    """Run the sampling attack against a bump that violates ``f <= 1/2`` on (0, eps).

    The property is false on a set of measure ``eps``; each trial draws
    ``n_samples`` uniform points from [0, 1] and misses with probability
    ``(1 - eps) ** n_samples``.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if n_samples < 1 or n_trials < 1:
        raise ValueError("n_samples and n_trials must be positive")
    net = make_bump(epsilon)
    box = BoxSet([0.0], [1.0])
    spec = LinearSpec([1.0], BUMP_LEVEL)
    missed = sum(
        sampling_attack(net, box, spec, n_samples, seed=(seed, t)) is None
        for t in range(n_trials)
    )
    return AttackReport(n_trials, missed, epsilon, n_samples, (1.0 - epsilon) ** n_samples)

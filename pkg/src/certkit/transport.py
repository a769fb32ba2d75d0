"""One-dimensional Wasserstein-1 distances, empirical risks, and shift-risk certificates.

The certified bound is ``R_Q(f) <= R_P(f) + rho * L_loss * L_f``.  It holds only
under covariate shift (the conditional label law is unchanged).  That
assumption cannot be checked from data, so every :class:`RiskCertificate`
carries it as an explicit flag, and a certificate with the flag unset is
reported as vacuous.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import linprog

from .network import Network, evaluate
from .reports import format_record

LP_ORACLE_MAX_SIZE = 64


class AssumptionGateError(RuntimeError):
    """A shift-risk certificate was requested while covariate shift is not assumed."""


@dataclass(frozen=True, eq=False)
class EmpiricalSample:
    """Uniform empirical measure on 1-D covariates, optionally labeled in {-1, +1}."""

    xs: np.ndarray
    ys: Optional[np.ndarray] = None

    def __post_init__(self):
        xs = np.array(self.xs, dtype=np.float64).ravel()
        if xs.size == 0:
            raise ValueError("sample is empty")
        if not np.all(np.isfinite(xs)):
            raise ValueError("sample contains non-finite covariates")
        xs.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        if self.ys is not None:
            ys = np.array(self.ys, dtype=np.float64).ravel()
            if ys.shape != xs.shape:
                raise ValueError(f"{ys.size} labels for {xs.size} covariates")
            if not np.all(np.isin(ys, (-1.0, 1.0))):
                raise ValueError("labels must be -1 or +1")
            ys.setflags(write=False)
            object.__setattr__(self, "ys", ys)

    def __len__(self) -> int:
        return self.xs.size

    @property
    def labeled(self) -> bool:
        return self.ys is not None

    def unlabeled(self) -> "EmpiricalSample":
        return EmpiricalSample(self.xs)


class LossKind(str, enum.Enum):
    HINGE = "hinge"
    ZERO_ONE = "zero_one"

    @property
    def lipschitz_const(self) -> float:
        """Lipschitz constant in the score; the 0-1 loss has none (``inf``)."""
        return 1.0 if self is LossKind.HINGE else math.inf

    def __call__(self, score, y) -> np.ndarray:
        score = np.asarray(score, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self is LossKind.HINGE:
            return np.maximum(0.0, 1.0 - y * score)
        pred = np.where(score >= 0, 1.0, -1.0)  # sign(0) = +1
        return (pred != y).astype(np.float64)


@dataclass(frozen=True)
class LinearPredictor:
    """Scalar affine score ``w * x + b``."""

    w: float
    b: float = 0.0

    def __call__(self, xs) -> np.ndarray:
        return self.w * np.asarray(xs, dtype=np.float64) + self.b

    @property
    def lipschitz(self) -> float:
        return abs(self.w)


Predictor = Union[LinearPredictor, Network, Callable]


def _scores(predictor: Predictor, xs: np.ndarray) -> np.ndarray:
    if isinstance(predictor, Network):
        if predictor.input_dim != 1 or predictor.output_dim != 1:
            raise ValueError("a network predictor must map R to R")
        return evaluate(predictor, xs[:, None])[:, 0]
    return np.asarray(predictor(xs), dtype=np.float64)


# -- Wasserstein-1 -----------------------------------------------------------

def w1_empirical_1d(a: EmpiricalSample, b: EmpiricalSample) -> float:
    """Exact W1 between two 1-D empirical measures.

    Equal sizes: mean absolute difference of the sorted samples (the monotone
    coupling is optimal).  Unequal sizes: integral of ``|F^-1 - G^-1|`` over
    (0, 1), computed exactly on the merged quantile grid ``{i/n} U {j/m}``.
    """
    xa, xb = np.sort(a.xs), np.sort(b.xs)
    n, m = xa.size, xb.size
    if n == m:
        return float(np.mean(np.abs(xa - xb)))
    # merge breakpoints in integer units of 1/(n*m) to avoid rounding ties
    cuts = np.union1d(np.arange(1, n + 1) * m, np.arange(1, m + 1) * n)
    starts = np.concatenate([[0], cuts[:-1]])
    widths = (cuts - starts) / (n * m)
    ia = starts // m  # quantile index of a on [start, cut)
    ib = starts // n
    return float(np.sum(widths * np.abs(xa[ia] - xb[ib])))


def w1_lp_oracle(a: EmpiricalSample, b: EmpiricalSample) -> float:
    """W1 by solving the transport linear program over coupling matrices.

    Independent of the sorting argument; intended as a test oracle for small
    samples (each at most 64 points).  Masses are scaled to integers (m per
    source point, n per target point) so the LP data is exact.
    """
    n, m = len(a), len(b)
    if n > LP_ORACLE_MAX_SIZE or m > LP_ORACLE_MAX_SIZE:
        raise ValueError(f"LP oracle is limited to {LP_ORACLE_MAX_SIZE} points per sample")
    cost = np.abs(a.xs[:, None] - b.xs[None, :]).ravel()
    rows = np.kron(np.eye(n), np.ones((1, m)))
    cols = np.kron(np.ones((1, n)), np.eye(m))
    a_eq = np.vstack([rows, cols])
    b_eq = np.concatenate([np.full(n, float(m)), np.full(m, float(n))])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun) / (n * m)


# -- risks and certificates --------------------------------------------------

def empirical_risk(predictor: Predictor, sample: EmpiricalSample, loss: LossKind) -> float:
    if not sample.labeled:
        raise ValueError("empirical risk needs labels")
    return float(np.mean(LossKind(loss)(_scores(predictor, sample.xs), sample.ys)))


@dataclass(frozen=True)
class RiskCertificate:
    """``certified_shift_risk = train_risk + rho * sensitivity``.

    The bound is a theorem only when ``covariate_shift_assumed`` is true;
    otherwise the record is kept for inspection but marked vacuous.
    """

    train_risk: float
    rho: float
    sensitivity: float
    certified_shift_risk: float
    covariate_shift_assumed: bool
    components: tuple = ()

    @property
    def stamped(self) -> bool:
        return self.covariate_shift_assumed and math.isfinite(self.certified_shift_risk)

    @property
    def vacuous(self) -> bool:
        return not self.stamped

    def require_stamped(self) -> "RiskCertificate":
        """Return self, or raise if the certificate cannot be asserted."""
        if not self.covariate_shift_assumed:
            raise AssumptionGateError(
                "covariate shift is not assumed; the shift-risk bound does not apply")
        if not math.isfinite(self.certified_shift_risk):
            raise AssumptionGateError("sensitivity is unbounded; the certificate is vacuous")
        return self

    def record_fields(self) -> dict:
        fields = {
            "train_risk": self.train_risk,
            "rho": self.rho,
            "sensitivity": self.sensitivity,
            "certified_shift_risk": self.certified_shift_risk,
            "covariate_shift_assumed": self.covariate_shift_assumed,
            "stamped": self.stamped,
        }
        for j, lj in self.components:
            fields[f"component_{j}_lipschitz"] = lj
        return fields

    def to_record(self) -> str:
        return format_record(self.record_fields())


def shift_certificate(train_risk: float, rho: float, l_loss: float, l_f: float,
                      covariate_shift_assumed: bool, components: tuple = ()) -> RiskCertificate:
    for name, v in (("train_risk", train_risk), ("rho", rho), ("l_loss", l_loss), ("l_f", l_f)):
        if isinstance(v, float) and math.isnan(v):
            raise ValueError(f"{name} is NaN")
    if not math.isfinite(train_risk):
        raise ValueError("train_risk must be finite")
    if not math.isfinite(rho) or rho < 0:
        raise ValueError("rho must be finite and nonnegative")
    if l_loss < 0 or l_f < 0:
        raise ValueError("Lipschitz constants must be nonnegative")
    sensitivity = l_loss * l_f
    if rho == 0 and math.isinf(sensitivity):
        # no transport means no change, whatever the sensitivity
        certified = float(train_risk)
    else:
        certified = train_risk + rho * sensitivity
    return RiskCertificate(float(train_risk), float(rho), float(sensitivity), float(certified),
                           bool(covariate_shift_assumed), tuple(components))


def sorted_coupling(train: EmpiricalSample, target: EmpiricalSample) -> EmpiricalSample:
    """Move each training point to its rank-matched target point, keeping its label."""
    if not train.labeled:
        raise ValueError("training sample needs labels")
    if len(train) != len(target):
        raise ValueError("sorted coupling needs samples of equal size")
    order = np.argsort(train.xs, kind="stable")
    moved = np.empty_like(train.xs)
    moved[order] = np.sort(target.xs)
    return EmpiricalSample(moved, train.ys)


def empirical_shift_check(predictor: Predictor, train: EmpiricalSample, target: EmpiricalSample,
                          loss: LossKind, l_f: float) -> tuple[float, float]:
    """Check ``R(transported) <= R(train) + W1 * L_loss * L_f`` on data.

    The transported sample is the optimal (sorted) coupling of train onto the
    target covariates with labels carried along, i.e. covariate shift holds
    by construction.  Returns ``(lhs, rhs)``.
    """
    loss = LossKind(loss)
    moved = sorted_coupling(train, target)
    lhs = empirical_risk(predictor, moved, loss)
    rho = w1_empirical_1d(train, target)
    rhs = shift_certificate(empirical_risk(predictor, train, loss), rho,
                            loss.lipschitz_const, l_f, True).certified_shift_risk
    return lhs, rhs


# -- counterexample: shift without covariate-shift structure -----------------

@dataclass(frozen=True)
class ShiftFlipScenario:
    train: EmpiricalSample
    target: EmpiricalSample
    predictor: LinearPredictor
    risk_train: float
    risk_target: float
    w1: float
    rho: float
    certificate: RiskCertificate

    def record_fields(self) -> dict:
        return {
            "rho": self.rho,
            "n": len(self.train),
            "w1": self.w1,
            "risk_P": self.risk_train,
            "risk_Q": self.risk_target,
            "covariate_shift_assumed": self.certificate.covariate_shift_assumed,
            "stamped": self.certificate.stamped,
        }


def shift_flip_construction(rho: float, n: int, seed: int = 0) -> ShiftFlipScenario:
    """A shift of W1 size at most rho that takes the 0-1 risk of ``f = 0`` from 0 to 1.

    P: covariates uniform on [0, 1], every label +1 (which ``sign(0) = +1``
    predicts correctly).  Q: the same covariates moved by ``rho`` and clipped
    to [0, 1], every label flipped to -1.  The labels change, so covariate
    shift fails and the certificate produced here is vacuous.
    """
    if not rho > 0 or not math.isfinite(rho):
        raise ValueError("rho must be positive and finite")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, 1.0, n)
    train = EmpiricalSample(xs, np.ones(n))
    target = EmpiricalSample(np.minimum(xs + rho, 1.0), -np.ones(n))
    f = LinearPredictor(0.0, 0.0)
    risk_p = empirical_risk(f, train, LossKind.ZERO_ONE)
    risk_q = empirical_risk(f, target, LossKind.ZERO_ONE)
    w1 = w1_empirical_1d(train, target)
    cert = shift_certificate(risk_p, w1, 1.0, f.lipschitz, covariate_shift_assumed=False)
    return ShiftFlipScenario(train, target, f, risk_p, risk_q, w1, float(rho), cert)


# -- CSV samples -------------------------------------------------------------

def load_sample(path) -> EmpiricalSample:
    """Read a CSV with header ``x`` or ``x,y``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header not in (["x"], ["x", "y"]):
            raise ValueError(f"{path}: header must be 'x' or 'x,y', got {','.join(header)!r}")
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if data.size == 0:
        raise ValueError(f"{path}: no rows")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: every row needs {len(header)} value(s)")
    return EmpiricalSample(data[:, 0], data[:, 1] if len(header) == 2 else None)


def save_sample(sample: EmpiricalSample, path) -> None:
    lines = ["x,y" if sample.labeled else "x"]
    if sample.labeled:
        lines += [f"{x!r},{int(y)}" for x, y in zip(sample.xs.tolist(), sample.ys.tolist())]
    else:
        lines += [repr(x) for x in sample.xs.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")

"""End-to-end reproductions of the worked examples and failure demonstrations.

Each ``example_*`` function returns an :class:`ExampleOutcome` whose
``passed`` flag records whether the headline inequality or identity held.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import linregress

from .additive import (additive_lipschitz_l1, additive_shift_certificate, component_lipschitz,
                       example_sparse_model, product_sup_inf)
from .bounds import (BoxSet, LinearSpec, OpCounter, Verdict, bound_spec, interval_output_bounds,
                     linear_output_bounds, margin_certificates)
from .complete import (attack_gap_experiment, enumerate_pieces_1d, make_sawtooth,
                       verify_complete)
from .network import evaluate, load_network, param_count, random_network, save_network
from .transport import (EmpiricalSample, LinearPredictor, LossKind, empirical_risk,
                        empirical_shift_check, shift_certificate, shift_flip_construction,
                        w1_empirical_1d)


@dataclass
class ExampleOutcome:
    name: str
    passed: bool
    fields: dict = field(default_factory=dict)


# -- cost scaling ------------------------------------------------------------

@dataclass(frozen=True)
class CostFit:
    param_counts: tuple[int, ...]
    ops: tuple[int, ...]
    passes: int
    slope: float
    intercept: float
    r_squared: float


def cost_scaling(dims_list, seed: int = 0, radius: float = 0.01,
                 intermediate: str = "backward") -> CostFit:
    """Instrumented operation counts of one spec bound versus parameter count M."""
    rng = np.random.default_rng(seed)
    ms, ops, ks = [], [], set()
    for dims in dims_list:
        net = random_network(dims, rng)
        box = BoxSet.around(rng.uniform(-1, 1, dims[0]), radius)
        spec = LinearSpec(rng.normal(size=dims[-1]))
        counter = OpCounter()
        sb = bound_spec(net, box, spec, intermediate, counter)
        ms.append(param_count(net))
        ops.append(counter.count)
        ks.add(sb.passes)
    if len(ks) != 1:
        raise ValueError("pass count K varies across the networks; the fit needs fixed K")
    fit = linregress(ms, ops)
    return CostFit(tuple(ms), tuple(ops), ks.pop(), float(fit.slope), float(fit.intercept),
                   float(fit.rvalue ** 2))


# -- examples ----------------------------------------------------------------

def example_empirical_w1(seed: int = 0, n: int = 200) -> ExampleOutcome:
    """Linear hinge classifier, shifted unlabeled target, checkable risk bound."""
    rng = np.random.default_rng(seed)
    xs = rng.normal(0.0, 1.0, n)
    ys = np.where(xs + rng.normal(0.0, 0.3, n) >= 0, 1.0, -1.0)
    train = EmpiricalSample(xs, ys)
    target = EmpiricalSample(rng.normal(0.4, 1.2, n))
    f = LinearPredictor(1.5, 0.1)
    rho = w1_empirical_1d(train, target)
    train_risk = empirical_risk(f, train, LossKind.HINGE)
    cert = shift_certificate(train_risk, rho, LossKind.HINGE.lipschitz_const, f.lipschitz, True)
    lhs, rhs = empirical_shift_check(f, train, target, LossKind.HINGE, f.lipschitz)
    return ExampleOutcome("empirical_w1", lhs <= rhs + 1e-9 and abs(rhs - cert.certified_shift_risk) <= 1e-12, {
        "rho_hat": rho, "train_risk": train_risk, "w": f.w,
        "certified_shift_risk": cert.certified_shift_risk,
        "transported_risk": lhs, "slack": rhs - lhs,
    })


def example_network_margin(seed: int = 0, radius: float = 1e-3) -> ExampleOutcome:
    """50-200-10 classifier: parameter count, nine margin certificates, cost scaling."""
    rng = np.random.default_rng(seed)
    net = random_network((50, 200, 10), rng)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "classifier.net"
        save_network(net, path)
        net = load_network(path)
    x0 = rng.uniform(-1, 1, 50)
    target = int(np.argmax(evaluate(net, x0)))
    box = BoxSet.around(x0, radius)
    certs = margin_certificates(net, box, target)
    safe = all(c.verdict is Verdict.SAFE for c in certs.values())
    sampled = box.sample(rng, 2000)
    outs = evaluate(net, sampled)
    sound = all(
        np.max(outs[:, k] - outs[:, target]) <= c.upper
        and np.min(outs[:, k] - outs[:, target]) >= c.lower
        for k, c in certs.items()
    )
    fit = cost_scaling([(50, h, 10) for h in (50, 100, 200, 400)], seed=seed)
    m = param_count(net)
    fields = {"M": m, "target_class": target, "radius": radius, "n_certificates": len(certs),
              "K": next(iter(certs.values())).passes, "all_safe": safe,
              "cost_fit_r2": fit.r_squared, "cost_fit_slope": fit.slope}
    for k, c in certs.items():
        fields[f"margin_{k}_upper"] = c.upper
        fields[f"margin_{k}_verdict"] = c.verdict
    passed = m == 12000 and len(certs) == 9 and sound and fit.r_squared >= 0.99
    return ExampleOutcome("network_margin", passed, fields)


def example_sparse_additive(alpha: float = 1.0, beta: float = 0.5, rho: float = 0.1) -> ExampleOutcome:
    """Centered 2-sparse model on [-1, 1]^5 with decomposed Lipschitz constant."""
    m = example_sparse_model(alpha, beta)
    box = BoxSet(-np.ones(m.dim), np.ones(m.dim))
    lips = [component_lipschitz(g, (-1.0, 1.0)) for _, g in m.components]
    l1 = additive_lipschitz_l1(m, box)
    inf, sup = product_sup_inf(m, box)
    cert = additive_shift_certificate(m, box, rho, 1.0)
    expected = abs(alpha) + 2 * abs(beta)
    passed = m.centered and abs(l1 - expected) <= 1e-12 and abs(cert.sensitivity - expected) <= 1e-12
    return ExampleOutcome("sparse_additive", passed, {
        "alpha": alpha, "beta": beta, "lipschitz_components": lips, "lipschitz_l1": l1,
        "inf": inf, "sup": sup, "sensitivity": cert.sensitivity,
        "certified_shift_risk": cert.certified_shift_risk,
    })


def example_attack_gap(seed: int = 0, epsilon: float = 0.01, n_samples: int = 10,
                       n_trials: int = 10_000) -> ExampleOutcome:
    rep = attack_gap_experiment(epsilon, n_samples, n_trials, seed)
    z = abs(rep.empirical_miss_rate - rep.predicted_miss_prob) / rep.standard_error
    fields = rep.record_fields()
    fields["z_score"] = z
    return ExampleOutcome("attack_gap", z <= 3.0, fields)


def example_shift_flip(seed: int = 0, rhos=(0.01, 0.1, 0.5), n: int = 100) -> ExampleOutcome:
    fields, ok = {}, True
    for rho in rhos:
        sc = shift_flip_construction(rho, n, seed)
        ok &= sc.risk_train == 0.0 and sc.risk_target == 1.0 and sc.w1 <= rho + 1e-9
        ok &= not sc.certificate.stamped
        for key, v in sc.record_fields().items():
            fields[f"rho_{rho}_{key}"] = v
    return ExampleOutcome("shift_flip", bool(ok), fields)


def example_sawtooth(kmax: int = 10, budget: int = 200_000) -> ExampleOutcome:
    fields, nodes = {}, []
    ok = True
    box = BoxSet([0.0], [1.0])
    for k in range(1, kmax + 1):
        row = sawtooth_row(k, box, budget)
        nodes.append(row["bab_nodes"])
        ok &= row["bab_verdict"] is Verdict.UNSAFE and row["pieces"] == 2 ** k
        for key, v in row.items():
            fields[f"k{k}_{key}"] = v
    growth = [nodes[k] / nodes[k - 1] for k in range(4, kmax)]  # nodes(k+1)/nodes(k), k >= 4
    ok &= all(g >= 1.5 for g in growth)
    fields["min_growth_k4_plus"] = min(growth) if growth else float("nan")
    return ExampleOutcome("sawtooth", bool(ok), fields)


def sawtooth_row(k: int, box: BoxSet, budget: int, margin: float = 1e-6) -> dict:
    """One line of the barrier table: pieces, BaB effort and incomplete-bound gap."""
    net = make_sawtooth(k)
    pieces = enumerate_pieces_1d(net, box)
    vmax, _ = pieces.spec_max(LinearSpec([1.0]))
    spec = LinearSpec([1.0], vmax - margin)
    res = verify_complete(net, box, spec, budget, gap_tol=1e-9)
    lin = linear_output_bounds(net, box, spec)
    ibp = interval_output_bounds(net, box, spec)
    return {
        "pieces": pieces.n_pieces,
        "max": vmax,
        "bab_verdict": res.verdict,
        "bab_nodes": res.nodes_expanded,
        "linear_upper": lin.upper,
        "linear_verdict": lin.verdict,
        "interval_upper": ibp.upper,
        "linear_gap": lin.upper - (vmax - spec.beta),
    }


EXAMPLES: dict[str, Callable[[int], ExampleOutcome]] = {
    "empirical_w1": lambda seed: example_empirical_w1(seed),
    "network_margin": lambda seed: example_network_margin(seed),
    "sparse_additive": lambda seed: example_sparse_additive(),
    "attack_gap": lambda seed: example_attack_gap(seed),
    "shift_flip": lambda seed: example_shift_flip(seed),
    "sawtooth": lambda seed: example_sawtooth(),
}


def reproduce_examples(seed: int = 0) -> list[ExampleOutcome]:
    """Run every bundled example; the bundle passes iff every outcome passed."""
    return [run(seed) for run in EXAMPLES.values()]

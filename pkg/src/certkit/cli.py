"""Command-line entry point.

Every command prints a flat ``key=value`` report (or JSON with ``--json``)
that starts with the command name, an echo of the configuration, and the
toolkit version.  Exit status: 0 safe/success, 1 violation found, 2
inconclusive (unknown verdict, exhausted budget, or unstamped certificate),
3 on errors, which are reported as one ``error=...`` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .additive import (additive_lipschitz_l1, additive_shift_certificate, center_model,
                       component_lipschitz, load_additive, monotone_endpoint_certificate,
                       NonMonotoneError, product_sup_inf)
from .bounds import (BoxSet, LinearSpec, Verdict, interval_output_bounds, linear_output_bounds,
                     margin_certificates)
from .complete import attack_gap_experiment, verify_complete
from .network import load_network, param_count
from .reports import format_record, to_json
from .reproduce import reproduce_examples, sawtooth_row
from .transport import (LossKind, LinearPredictor, empirical_risk, empirical_shift_check,
                        load_sample, shift_certificate, shift_flip_construction, w1_empirical_1d,
                        w1_lp_oracle)

EXIT_OK, EXIT_VIOLATION, EXIT_INCONCLUSIVE, EXIT_ERROR = 0, 1, 2, 3
SEED_ENV = "CERTKIT_SEED"


class UsageError(ValueError):
    """Invalid command-line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which means "inconclusive" here
        raise UsageError(message)


def _read_vector(path) -> np.ndarray:
    """Numbers from a text/CSV file, comma- or whitespace-separated; a non-numeric header is skipped."""
    values = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        tokens = line.replace(",", " ").split()
        try:
            values.extend(float(t) for t in tokens)
        except ValueError:
            if i == 0:
                continue
            raise ValueError(f"{path}: line {i + 1} is not numeric") from None
    if not values:
        raise ValueError(f"{path}: no numbers found")
    return np.array(values)


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.replace(",", " ").split()])


def _box(args) -> BoxSet:
    if args.center is not None:
        if args.radius is None:
            raise UsageError("--center needs --radius")
        return BoxSet.around(_read_vector(args.center), args.radius)
    if args.lo is not None and args.hi is not None:
        return BoxSet(_parse_floats(args.lo), _parse_floats(args.hi))
    raise UsageError("give either --center/--radius or --lo/--hi")


def _spec(args) -> LinearSpec:
    if args.a is None:
        raise UsageError("give --a (and optionally --beta)")
    return LinearSpec(_parse_floats(args.a), args.beta)


def _verdict_exit(verdict: Verdict) -> int:
    return {Verdict.SAFE: EXIT_OK, Verdict.UNSAFE: EXIT_VIOLATION}.get(verdict, EXIT_INCONCLUSIVE)


# -- commands ----------------------------------------------------------------

def cmd_verify(args):
    net = load_network(args.net)
    box = _box(args)
    fields = {"M": param_count(net)}
    if args.target_class is not None:
        certs = margin_certificates(net, box, args.target_class, args.threads, args.intermediate)
        verdicts = [c.verdict for c in certs.values()]
        if all(v is Verdict.SAFE for v in verdicts):
            overall = Verdict.SAFE
        elif any(v is Verdict.UNSAFE for v in verdicts):
            overall = Verdict.UNSAFE
        else:
            overall = Verdict.UNKNOWN
        fields["target_class"] = args.target_class
        fields["n_certificates"] = len(certs)
        for k, c in certs.items():
            for key, v in c.record_fields().items():
                fields[f"margin_{k}.{key}"] = v
        fields["verdict"] = overall
        return fields, _verdict_exit(overall)
    spec = _spec(args)
    if args.method == "interval":
        cert = interval_output_bounds(net, box, spec)
    else:
        cert = linear_output_bounds(net, box, spec, args.intermediate)
    fields.update(cert.record_fields())
    return fields, _verdict_exit(cert.verdict)


def cmd_verify_complete(args):
    net = load_network(args.net)
    box = _box(args)
    spec = _spec(args)
    res = verify_complete(net, box, spec, args.budget, args.gap_tol, args.threads)
    return res.record_fields(), _verdict_exit(res.verdict)


def cmd_w1(args):
    a, b = load_sample(args.source), load_sample(args.target)
    fields = {"n_source": len(a), "n_target": len(b), "w1": w1_empirical_1d(a, b)}
    if args.lp_check:
        fields["w1_lp"] = w1_lp_oracle(a, b)
    return fields, EXIT_OK


def cmd_shift_cert(args):
    train = load_sample(args.train)
    loss = LossKind(args.loss)
    if args.net is not None:
        predictor = load_network(args.net)
        if args.l_f is None:
            raise UsageError("--net needs an explicit --l-f")
        l_f = args.l_f
    else:
        predictor = LinearPredictor(args.w, args.b)
        l_f = predictor.lipschitz if args.l_f is None else args.l_f
    fields = {}
    if args.rho is not None:
        rho = args.rho
        fields["rho_source"] = "given"
    elif args.target is not None:
        rho = w1_empirical_1d(train, load_sample(args.target))
        fields["rho_source"] = "empirical_w1"
    else:
        raise UsageError("give --rho or --target")
    risk = empirical_risk(predictor, train, loss)
    cert = shift_certificate(risk, rho, loss.lipschitz_const, l_f, args.assume_covariate_shift)
    fields.update(cert.record_fields())
    if args.target is not None and args.rho is None:
        target = load_sample(args.target)
        if len(target) == len(train):
            lhs, rhs = empirical_shift_check(predictor, train, target, loss, l_f)
            fields.update({"transported_risk": lhs, "check_rhs": rhs, "check_slack": rhs - lhs})
    return fields, EXIT_OK if cert.stamped else EXIT_INCONCLUSIVE


def cmd_additive(args):
    m = load_additive(args.model)
    if args.center:
        m = center_model(m)
    if args.lo is not None and args.hi is not None:
        box = BoxSet(_parse_floats(args.lo), _parse_floats(args.hi))
    else:
        box = BoxSet([r[0] for r in m.reference], [r[1] for r in m.reference])
    inf, sup = product_sup_inf(m, box)
    fields = {"dim": m.dim, "sparsity": m.sparsity, "centered": m.centered,
              "constant": m.constant, "inf": inf, "sup": sup}
    for j, g in m.components:
        fields[f"component_{j}_lipschitz"] = component_lipschitz(g, (box.lo[j], box.hi[j]))
    fields["lipschitz_l1"] = additive_lipschitz_l1(m, box)
    try:
        mono = monotone_endpoint_certificate(m, box)
        fields["monotone"] = True
        fields["monotone_vertex"] = mono.vertex
        fields["monotone_value"] = mono.value
    except NonMonotoneError as exc:
        fields["monotone"] = False
        fields["nonmonotone_coordinate"] = exc.coordinate
    exit_code = EXIT_OK
    if args.rho is not None:
        if not m.centered:
            raise UsageError("a shift certificate needs a centered model; pass --center")
        cert = additive_shift_certificate(m, box, args.rho, args.l_loss, args.train_risk,
                                          args.assume_covariate_shift)
        fields.update(cert.record_fields())
        exit_code = EXIT_OK if cert.stamped else EXIT_INCONCLUSIVE
    return fields, exit_code


def cmd_sawtooth_demo(args):
    box = BoxSet([0.0], [1.0])
    fields = {}
    for k in range(args.kmin, args.kmax + 1):
        for key, v in sawtooth_row(k, box, args.budget).items():
            fields[f"k{k}.{key}"] = v
    return fields, EXIT_OK


def cmd_attack_demo(args):
    rep = attack_gap_experiment(args.epsilon, args.samples, args.trials, args.seed)
    fields = rep.record_fields()
    fields["standard_error"] = rep.standard_error
    return fields, EXIT_OK


def cmd_shift_flip_demo(args):
    sc = shift_flip_construction(args.rho, args.n, args.seed)
    fields = sc.record_fields()
    violated = sc.risk_target > sc.certificate.certified_shift_risk
    fields["bound_would_fail"] = violated
    return fields, EXIT_OK


def cmd_reproduce(args):
    outcomes = reproduce_examples(args.seed)
    fields = {}
    for o in outcomes:
        fields[f"{o.name}.passed"] = o.passed
        for key, v in o.fields.items():
            fields[f"{o.name}.{key}"] = v
    failed = [o.name for o in outcomes if not o.passed]
    fields["all_passed"] = not failed
    if failed:
        fields["failed"] = " ".join(failed)
    return fields, EXIT_OK if not failed else EXIT_VIOLATION


# -- parser ------------------------------------------------------------------

def _add_box(p):
    p.add_argument("--center", help="file with the box center")
    p.add_argument("--radius", type=float, help="l-infinity radius around --center")
    p.add_argument("--lo", help="comma-separated lower corner")
    p.add_argument("--hi", help="comma-separated upper corner")


def _add_spec(p):
    p.add_argument("--a", help="comma-separated output functional")
    p.add_argument("--beta", type=float, default=0.0, help="threshold (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="certkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"certkit {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help=f"random seed (overridden by ${SEED_ENV})")
    common.add_argument("--out", help="also write the report to this file")
    common.add_argument("--json", action="store_true", help="emit JSON instead of key=value lines")
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("verify", parents=[common], help="incomplete bound on a spec or all logit margins")
    p.add_argument("--net", required=True)
    _add_box(p)
    _add_spec(p)
    p.add_argument("--target-class", type=int, help="certify that this class wins on the box")
    p.add_argument("--method", choices=("backward", "interval"), default="backward")
    p.add_argument("--intermediate", choices=("backward", "interval"), default="backward")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("verify-complete", parents=[common], help="branch-and-bound decision")
    p.add_argument("--net", required=True)
    _add_box(p)
    _add_spec(p)
    p.add_argument("--budget", type=int, default=100_000)
    p.add_argument("--gap-tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_verify_complete)

    p = sub.add_parser("w1", parents=[common], help="exact 1-D Wasserstein-1 distance")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--lp-check", action="store_true", help="also solve the transport LP")
    p.set_defaults(func=cmd_w1)

    p = sub.add_parser("shift-cert", parents=[common], help="certified risk under covariate shift")
    p.add_argument("--train", required=True, help="labeled CSV (x,y)")
    p.add_argument("--target", help="target CSV; its W1 to --train is used as rho")
    p.add_argument("--rho", type=float)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--net", help="1-D network predictor instead of w, b")
    p.add_argument("--l-f", type=float, help="Lipschitz constant of the predictor")
    p.add_argument("--loss", choices=[k.value for k in LossKind], default=LossKind.HINGE.value)
    p.add_argument("--assume-covariate-shift", action="store_true",
                   help="assert that the label law does not change (required for a stamped certificate)")
    p.set_defaults(func=cmd_shift_cert)

    p = sub.add_parser("additive", parents=[common], help="certificates for an additive model")
    p.add_argument("--model", required=True)
    p.add_argument("--lo")
    p.add_argument("--hi")
    p.add_argument("--center", action="store_true", help="center the model first")
    p.add_argument("--rho", type=float)
    p.add_argument("--l-loss", type=float, default=1.0)
    p.add_argument("--train-risk", type=float, default=0.0)
    p.add_argument("--assume-covariate-shift", action="store_true")
    p.set_defaults(func=cmd_additive)

    p = sub.add_parser("sawtooth-demo", parents=[common], help="exponential-barrier table")
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--budget", type=int, default=200_000)
    p.set_defaults(func=cmd_sawtooth_demo)

    p = sub.add_parser("attack-demo", parents=[common], help="random sampling misses a small violation")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--trials", type=int, default=10_000)
    p.set_defaults(func=cmd_attack_demo)

    p = sub.add_parser("shift-flip-demo", parents=[common], help="label flip under a tiny W1 shift")
    p.add_argument("--rho", type=float, default=0.01)
    p.add_argument("--n", type=int, default=100)
    p.set_defaults(func=cmd_shift_flip_demo)

    p = sub.add_parser("reproduce", parents=[common], help="run every bundled worked example")
    p.set_defaults(func=cmd_reproduce)
    return parser


def _config(args) -> dict:
    skip = {"func", "command", "out", "json"}
    return {f"config.{k}": v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        env_seed = os.environ.get(SEED_ENV)
        if env_seed is not None:
            try:
                args.seed = int(env_seed)
            except ValueError:
                raise UsageError(f"{SEED_ENV} must be an integer") from None
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        result, code = args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error record
        message = " ".join(str(exc).split())
        sys.stderr.write(f"error={type(exc).__name__}: {message}\n")
        return EXIT_ERROR

    fields = {"command": args.command, "version": __version__,
              "deterministic": args.threads == 1, **_config(args), **result}
    text = to_json(fields) + "\n" if args.json else format_record(fields)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``quadsynth <subcommand> ...``.

Every subcommand prints one JSON document.  Exit status is 0 on success,
1 on bad input and 2 when a numerical method fails to certify its result.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .curve import CurveSpec, solve_curve_grid, szego_rule
from .gauss import PenaltySpec, penalty_optimize, solve_gauss
from .moments import MomentError, MomentVector, parse_measure_spec, parse_moments, standard_moments
from .plane import degree3_rule, solve_cubature
from .poly import PolynomialSyntaxError, format_polynomial, parse_polynomial
from .rules import NumericalFailure, QuadratureRule, bound_table, caratheodory_prune, verify_exactness

log = logging.getLogger("quadsynth")

DOC_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# JSON with 17 significant digits

def _encode(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        if x == int(x) and abs(x) < 1e15:
            return f"{x:.1f}"
        return format(x, ".17g")
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def dumps(obj) -> str:
    return _encode(obj)


# ---------------------------------------------------------------------------
# documents

def rule_document(rule: QuadratureRule, degree: int, provenance: dict) -> dict:
    return {
        "version": DOC_VERSION,
        "n": rule.n,
        "degree": degree,
        "nodes": rule.nodes.tolist(),
        "weights": rule.weights.tolist(),
        "provenance": provenance,
    }


def read_rule_document(text: str) -> tuple[QuadratureRule, dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"rule file is not valid JSON: {exc}") from exc
    for key in ("version", "n", "nodes", "weights"):
        if key not in doc:
            raise InputError(f"rule file lacks {key!r}")
    if doc["version"] != DOC_VERSION:
        raise InputError(f"unsupported rule document version {doc['version']}")
    n = int(doc["n"])
    nodes = np.asarray(doc["nodes"], dtype=float).reshape(-1, n) if doc["nodes"] else np.zeros((0, n))
    weights = np.asarray(doc["weights"], dtype=float)
    if nodes.shape[0] != weights.size:
        raise InputError(f"{nodes.shape[0]} nodes but {weights.size} weights")
    if nodes.size and nodes.shape[1] != n:
        raise InputError(f"dimension mismatch: nodes have {nodes.shape[1]} coordinates, n={n}")
    try:
        rule = QuadratureRule(nodes, weights)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return rule, doc


def _load_moments(args, degree: int) -> MomentVector:
    if getattr(args, "moments", None):
        try:
            text = Path(args.moments).read_text()
        except OSError as exc:
            raise InputError(f"cannot read moments: {exc}") from exc
        L = parse_moments(text)
        if L.degree < degree:
            raise MomentError(f"moment file has degree {L.degree}, need {degree}")
        return L.truncate(degree)
    if getattr(args, "measure", None):
        return standard_moments(parse_measure_spec(args.measure), degree)
    raise InputError("give --moments FILE or --measure SPEC")


def _residual_summary(rule: QuadratureRule, L: MomentVector) -> dict:
    rep = verify_exactness(rule, L)
    return {"max_residual": rep.max_residual, "weight_margin": rep.weight_margin}


# ---------------------------------------------------------------------------
# subcommands

def cmd_gauss(args) -> dict:
    d = args.d
    L = _load_moments(args, 2 * d - 1)
    if L.n != 1:
        raise InputError(f"dimension mismatch: gauss needs n=1, got n={L.n}")
    if args.penalty:
        spec = PenaltySpec(args.penalty, xi=args.xi, alpha=args.alpha)
        rule = penalty_optimize(L, args.budget or d + 2, spec, d=d)
        prov = {"method": "penalty", "penalty": {"kind": spec.kind, "xi": spec.xi, "alpha": spec.alpha,
                                                 "budget": args.budget or d + 2}}
    else:
        res = solve_gauss(L, d)
        rule = res.rule
        prov = {"method": "gauss", "penalty": f"X^{2 * d}",
                "extension_value": res.extension_value, "degenerate": res.degenerate,
                "sdp": {"status": res.sdp_status, "gap": res.sdp_gap}}
    prov["bounds"] = {"gauss": {"bound": d, "achieved": len(rule)}}
    prov["residuals"] = _residual_summary(rule, L)
    return rule_document(rule, 2 * d - 1, prov)


def cmd_szego(args) -> dict:
    d = args.d
    L = _load_moments(args, 2 * d - 1)
    if L.n != 2:
        raise InputError(f"dimension mismatch: szego needs n=2, got n={L.n}")
    rule = szego_rule(L, d)
    prov = {"method": "szego", "bounds": {"szego": {"bound": 2 * d, "achieved": len(rule)}},
            "residuals": _residual_summary(rule, L)}
    return rule_document(rule, 2 * d - 1, prov)


def cmd_curve(args) -> dict:
    d = args.d
    L = _load_moments(args, 2 * d - 1)
    if L.n != 2:
        raise InputError(f"dimension mismatch: curve needs n=2, got n={L.n}")
    curve = CurveSpec(parse_polynomial(args.g, n=2))
    f = parse_polynomial(args.penalty, n=2) if args.penalty else None
    res = solve_curve_grid(L, curve, d, f=f, grid_res=args.grid_res, tol=args.tol or 1e-7)
    prov = {"method": "curve-grid", "curve": format_polynomial(curve.g),
            "penalty": format_polynomial(f) if f is not None else f"X1^{2 * d} + 2 * X2^{2 * d}",
            "certified_bound": res.certified_bound, "lp_value": res.lp_value, "lp_exact": res.lp_exact,
            "samples": res.samples, "pre_merge_nodes": res.pre_merge_nodes,
            "residuals": _residual_summary(res.rule, L), "on_curve": res.info.get("on_curve")}
    doc = rule_document(res.rule, 2 * d - 1, prov)
    doc["certified_bound"] = res.certified_bound
    return doc


def cmd_cubature(args) -> dict:
    d = args.d
    L = _load_moments(args, 2 * d - 1)
    if L.n != 2:
        raise InputError(f"dimension mismatch: cubature needs n=2, got n={L.n}")
    res = solve_cubature(L, d, seed=args.seed, tol=args.tol or 1e-7, fallback_grid_res=args.fallback_grid_res)
    prov = {"method": f"cubature/{res.path}", "penalty": f"X1^{2 * d} + X2^{2 * d}",
            "bound": res.bound, "sos_exact": res.sos_exact, "residuals": _residual_summary(res.rule, L),
            "sdp": {"status": res.sdp_status, "gap": res.sdp_gap}}
    if res.certificate is not None:
        prov["certificate"] = format_polynomial(res.certificate.h)
    doc = rule_document(res.rule, 2 * d - 1, prov)
    doc["bound"] = res.bound
    return doc


def cmd_degree3(args) -> dict:
    L = _load_moments(args, 3)
    if args.n is not None and args.n != L.n:
        raise InputError(f"dimension mismatch: --n {args.n} but moments live in R^{L.n}")
    rule = degree3_rule(L, L.n, seed=args.seed, tol=args.tol or 1e-7)
    prov = {"method": "degree3", "residuals": _residual_summary(rule, L)}
    return rule_document(rule, 3, prov)


def _read_rule(path: str) -> tuple[QuadratureRule, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read rule: {exc}") from exc
    return read_rule_document(text)


def cmd_verify(args) -> dict:
    rule, doc = _read_rule(args.rule)
    degree = args.degree if args.degree is not None else int(doc.get("degree", 0))
    if getattr(args, "moments", None) or getattr(args, "measure", None):
        L = _load_moments(args, degree)
    else:
        L = rule.moments(degree)
    if L.n != rule.n:
        raise InputError(f"dimension mismatch: rule in R^{rule.n}, moments in R^{L.n}")
    rep = verify_exactness(rule, L).as_dict()
    tol = args.tol or 1e-7
    rep["tolerance"] = tol
    rep["exact"] = rep["max_residual"] <= tol
    return rep


def cmd_prune(args) -> dict:
    rule, doc = _read_rule(args.rule)
    pruned = caratheodory_prune(rule, args.degree)
    prov = dict(doc.get("provenance") or {})
    prov["pruned"] = {"degree": args.degree, "before": len(rule), "after": len(pruned)}
    prov["residuals"] = _residual_summary(pruned, rule.moments(args.degree))
    return rule_document(pruned, args.degree, prov)


def cmd_bounds(args) -> dict:
    return bound_table(args.d)


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", help="write the JSON document here instead of stdout")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=None, help="override default tolerances")
    common.add_argument("--format", choices=["json"], default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    source = _Parser(add_help=False)
    source.add_argument("--moments", help="moment file (JSON)")
    source.add_argument("--measure", help="measure spec, e.g. uniform:-1:1 or square:-1:1")

    p = _Parser(prog="quadsynth", description="Quadrature rules with few nodes from truncated moments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gauss", parents=[common, source], help="univariate Gaussian rule")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--penalty", choices=["sum-abs", "max-abs", "sum-power", "sum-squares"])
    s.add_argument("--xi", type=float, default=0.0)
    s.add_argument("--alpha", type=float, default=1.5)
    s.add_argument("--budget", type=int, help="node budget m for the penalty optimizer (default d+2)")
    s.set_defaults(func=cmd_gauss)

    s = sub.add_parser("szego", parents=[common, source], help="rule on the unit circle")
    s.add_argument("--d", type=int, required=True)
    s.set_defaults(func=cmd_szego)

    s = sub.add_parser("curve", parents=[common, source], help="rule on a plane algebraic curve")
    s.add_argument("--g", required=True, help='curve polynomial, e.g. "X^2 + Y^2 - 1"')
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--grid-res", type=int, default=1024)
    s.add_argument("--penalty", help="penalty polynomial")
    s.set_defaults(func=cmd_curve)

    s = sub.add_parser("cubature", parents=[common, source], help="planar cubature")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--fallback-grid-res", type=int, default=64)
    s.set_defaults(func=cmd_cubature)

    s = sub.add_parser("degree3", parents=[common, source], help="degree-3 rule in any dimension")
    s.add_argument("--n", type=int)
    s.set_defaults(func=cmd_degree3)

    s = sub.add_parser("verify", parents=[common, source], help="exactness report for a rule")
    s.add_argument("--rule", required=True)
    s.add_argument("--degree", type=int)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("prune", parents=[common], help="Caratheodory pruning of a rule")
    s.add_argument("--rule", required=True)
    s.add_argument("--degree", type=int, required=True)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("bounds", parents=[common], help="node-count bound table row")
    s.add_argument("--d", type=int, required=True)
    s.set_defaults(func=cmd_bounds)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(name)s: %(message)s")
    if hasattr(args, "d") and args.d is not None and args.d < 1:
        print("error: --d must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        doc = args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        diag = {k: v for k, v in exc.diagnostics.items() if isinstance(v, (int, float, str))}
        if diag:
            print(dumps(diag), file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, MomentError, PolynomialSyntaxError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = dumps(doc)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

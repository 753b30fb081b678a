"""Command-line front end.

    borelrand eval   --structure pureset --formula F --assign X='{e0:[0,1)}'
    borelrand qe     --structure-signature graph.sig --formula F --eps 1/16
    borelrand qe-apa --formula F --eps 1/32
    borelrand iso    --flavor apa --pres1 std --pres2 rot:1/3 --steps 8 --prec 6
    borelrand check

Reports are JSON with sorted keys and rationals written p/q, so reruns of a
command print identical bytes.  Exit status: 0 ok, 1 suite failure, 2 usage
or parse error, 3 resource cap.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .errors import ResourceCapError, SearchTimeout
from .events import format_rational, parse_event, parse_rational
from .structures import Signature, Structure, StructureError, load_structure

EXIT_OK, EXIT_SUITE, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _jsonable(x):
    if isinstance(x, Fraction):
        return format_rational(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def emit_report(report: dict, fmt: str = "json") -> str:
    """Stable text for a report: compact sorted JSON, or indented key: value lines."""
    data = _jsonable(report)
    if fmt == "json":
        return json.dumps(data, sort_keys=True, separators=(",", ":"))
    lines = []

    def walk(prefix: str, v) -> None:
        if isinstance(v, dict):
            for k in sorted(v):
                walk(f"{prefix}.{k}" if prefix else k, v[k])
        elif isinstance(v, list) and v and isinstance(v[0], (dict, list)):
            for i, item in enumerate(v):
                walk(f"{prefix}[{i}]", item)
        else:
            lines.append(f"{prefix}: {json.dumps(v) if isinstance(v, list) else v}")

    walk("", data)
    return "\n".join(lines)


def _rational(text: str) -> Fraction:
    try:
        q = parse_rational(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{exc}; tolerances are exact rationals such as 1/16") from None
    if q <= 0:
        raise argparse.ArgumentTypeError("tolerances must be positive")
    return q


def _signature_from_file(path: str) -> Signature:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read signature file {path}: {exc}") from None
    if "size" in data:
        return load_structure(f"finite:{path}").signature
    return Signature.from_json(data)


def _structure(args) -> Structure | None:
    if getattr(args, "structure", None):
        return load_structure(args.structure)
    return None


def _signature(args) -> Signature | None:
    if getattr(args, "structure_signature", None):
        return _signature_from_file(args.structure_signature)
    M = _structure(args)
    return M.signature if M is not None else None


def _parse_assignments(items: Sequence[str], M: Structure | None):
    from .randvars import parse_rv

    rvs, events = {}, {}
    for item in items:
        name, sep, lit = item.partition("=")
        if not sep or not name.strip():
            raise UsageError(f"assignment {item!r} is not NAME=LITERAL")
        name, lit = name.strip(), lit.strip()
        if lit.startswith("{"):
            if M is None:
                raise UsageError("random-variable assignments need --structure")
            rvs[name] = parse_rv(lit, M)
        else:
            events[name] = parse_event(lit)
    return rvs, events


def cmd_eval(args) -> dict:
    from .evaluator import eval_rformula
    from .rformula import parse_rformula

    M = _structure(args)
    phi = parse_rformula(args.formula, M.signature if M else None)
    rvs, events = _parse_assignments(args.assign, M)
    br = eval_rformula(M, phi, rvs, events, mesh=args.mesh, max_candidates=args.max_candidates)
    if br.lo == br.hi:
        return {"value": br.lo}
    return {"lo": br.lo, "hi": br.hi}


def _qe_report(result, trace, with_trace: bool) -> dict:
    out = {"formula": result.sexpr(), "quantifier_free": result.is_qf}
    if with_trace:
        out["trace"] = trace.to_json()
    return out


def cmd_qe(args) -> dict:
    from .qe import QETrace, qe_randomization
    from .rformula import parse_rformula

    phi = parse_rformula(args.formula, _signature(args))
    trace = QETrace(phi.sexpr(), args.eps)
    result = qe_randomization(phi, args.eps, trace, max_m=args.max_m, max_points=args.max_points)
    return _qe_report(result, trace, not args.no_trace)


def cmd_qe_apa(args) -> dict:
    from .qe import QETrace, qe_apa
    from .rformula import parse_rformula

    phi = parse_rformula(args.formula, None)
    trace = QETrace(phi.sexpr(), args.eps)
    result = qe_apa(phi, args.eps, trace, max_points=args.max_points)
    return _qe_report(result, trace, not args.no_trace)


def cmd_iso(args) -> dict:
    from .categoricity import BackAndForth, max_deviation, preservation_table
    from .presentations import EventPresentation, load_presentation

    flavor = {"apa": "apa", "rand": "k", "k": "k"}[args.flavor.lower()]
    p1, p2 = load_presentation(args.pres1), load_presentation(args.pres2)
    if flavor == "apa" and not (isinstance(p1, EventPresentation) and isinstance(p2, EventPresentation)):
        raise UsageError("--flavor apa takes event presentations (std, rot:p/q, rot:sqrt2, digitperm:...)")
    if flavor == "k" and (isinstance(p1, EventPresentation) or isinstance(p2, EventPresentation)):
        raise UsageError("--flavor rand takes induced:<structure>[@scramble] presentations")
    engine = BackAndForth(p1, p2, flavor, args.prec)
    oracle = engine.run(args.steps)
    sample = args.sample if args.sample is not None else max(args.steps // 2, 1)
    rows = preservation_table(oracle, sample)
    dev = max_deviation(rows)
    bound = Fraction(1, 1 << max(args.prec - 2, 0))
    return {
        "flavor": args.flavor.lower(),
        "pres1": p1.name,
        "pres2": p2.name,
        "steps": args.steps,
        "prec": args.prec,
        "log": engine.map.log,
        "preservation": rows,
        "max_deviation": dev,
        "bound": bound,
        "within_bound": dev <= bound,
    }


def _acceptance_path() -> Path:
    return Path(__file__).resolve().parents[2] / "tests" / "test_acceptance.py"


def cmd_check(args) -> tuple[dict, int]:
    try:
        import pytest
    except ImportError:
        raise UsageError("the check subcommand needs pytest (pip install borelrand[test])") from None
    path = Path(args.path) if args.path else _acceptance_path()
    if not path.exists():
        raise UsageError(f"acceptance suite not found at {path}")

    class Collect:
        def __init__(self) -> None:
            self.failed: list[str] = []
            self.passed: list[str] = []

        def pytest_runtest_logreport(self, report) -> None:
            if report.when == "call" or report.outcome == "failed":
                (self.failed if report.failed else self.passed).append(report.nodeid)

    col = Collect()
    code = pytest.main([str(path), "-q", "-s", "-p", "no:cacheprovider"], plugins=[col])
    status = EXIT_OK if code == 0 else EXIT_SUITE
    return {"suite": str(path.name), "passed": len(col.passed), "failed": sorted(set(col.failed)), "ok": code == 0}, status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="borelrand", description="Exact workbench for Borel randomizations.")
    ap.add_argument("--format", choices=("json", "text"), default="json")
    ap.add_argument("--timing", action="store_true", help="add wall-clock seconds to the report")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate a formula under an assignment")
    p.add_argument("--structure")
    p.add_argument("--formula", required=True)
    p.add_argument("--assign", action="append", default=[], metavar="NAME=LITERAL")
    p.add_argument("--mesh", type=int, default=8)
    p.add_argument("--max-candidates", type=int, default=2_000_000)
    p.set_defaults(run=cmd_eval)

    for name, fn, blurb in (
        ("qe", cmd_qe, "eliminate quantifiers in a randomization to within eps"),
        ("qe-apa", cmd_qe_apa, "eliminate quantifiers over the event algebra to within eps"),
    ):
        p = sub.add_parser(name, help=blurb)
        if name == "qe":
            grp = p.add_mutually_exclusive_group()
            grp.add_argument("--structure")
            grp.add_argument("--structure-signature", metavar="PATH")
            p.add_argument("--max-m", type=int, default=4)
        p.add_argument("--formula", required=True)
        p.add_argument("--eps", type=_rational, required=True)
        p.add_argument("--max-points", type=int, default=400_000)
        p.add_argument("--no-trace", action="store_true")
        p.set_defaults(run=fn)

    p = sub.add_parser("iso", help="run a back-and-forth between two presentations")
    p.add_argument("--flavor", choices=("apa", "rand", "APA", "RAND", "k"), default="apa")
    p.add_argument("--pres1", required=True)
    p.add_argument("--pres2", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--prec", type=int, default=6)
    p.add_argument("--sample", type=int)
    p.set_defaults(run=cmd_iso)

    p = sub.add_parser("check", help="run the acceptance suite")
    p.add_argument("--path", help="path to test_acceptance.py")
    p.set_defaults(run=cmd_check)
    return ap


def execute(argv: Sequence[str]) -> tuple[dict, int, str]:
    """Run one command; returns (report, exit status, output format)."""
    try:
        args = build_parser().parse_args(list(argv))
    except SystemExit as exc:
        # argparse has already printed its message; --help exits with 0
        if not exc.code:
            raise
        return {"error": "usage", "detail": "bad command line"}, EXIT_USAGE, "json"
    start = time.perf_counter()
    try:
        out = args.run(args)
    except ResourceCapError as exc:
        return {"error": "resource cap", "detail": str(exc)}, EXIT_CAP, args.format
    except SearchTimeout as exc:
        return {"error": "search timeout", "detail": str(exc)}, EXIT_CAP, args.format
    except (UsageError, StructureError, ValueError, KeyError, TypeError) as exc:
        return {"error": "usage", "detail": str(exc).strip("'\"")}, EXIT_USAGE, args.format
    report, status = out if isinstance(out, tuple) else (out, EXIT_OK)
    if args.timing:
        report["seconds"] = round(time.perf_counter() - start, 3)
    return report, status, args.format


def main(argv: Sequence[str] | None = None) -> int:
    report, status, fmt = execute(sys.argv[1:] if argv is None else argv)
    text = emit_report(report, fmt)
    print(text, file=sys.stderr if status == EXIT_USAGE or status == EXIT_CAP else sys.stdout)
    return status


if __name__ == "__main__":
    sys.exit(main())

"""Command-line driver: ``movebc verify|run|trace|fuzz``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from . import interp
from .absdom import LocalState
from .bgraph import EMPTY
from .ir import AsmError, parse_program
from .soundness import check_invariants, differential_run
from .verifier import verify_program

EXIT_OK, EXIT_REJECTED, EXIT_ERROR = 0, 1, 2


class CliError(Exception):
    pass


def _load(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}") from None
    try:
        return parse_program(text)
    except AsmError as e:
        raise CliError("\n".join(f"{path}:{d}" for d in e.diagnostics)) from None


def _emit(args, text_lines, payload):
    if args.format == "json":
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def _parse_args_list(values):
    try:
        return [interp.parse_value(v) for v in values]
    except ValueError as e:
        raise CliError(f"bad argument literal: {e}") from None


def _resolve_entry(prog, entry):
    if entry in prog.procs:
        return entry
    matches = [q for q in prog.procs if q.split("::")[1] == entry]
    if len(matches) == 1:
        return matches[0]
    raise CliError(f"unknown entry procedure {entry}")


# --------------------------------------------------------------------------- commands


def cmd_verify(args) -> int:
    worst = EXIT_OK
    results = []
    lines = []
    for path in args.paths:
        try:
            prog = _load(path)
        except CliError as e:
            lines.append(str(e))
            results.append({"path": path, "verdict": "error", "error": str(e)})
            worst = EXIT_ERROR
            continue
        report = verify_program(prog, widen_k=args.widen_k, jobs=args.jobs)
        ok = report.verified
        for q in sorted(report.procs):
            r = report.procs[q]
            lines.append(f"{q}: {'verified' if r.verified else 'rejected'}")
        lines.extend(str(d) for d in report.diagnostics)
        lines.extend(f"warning: {w}" for w in report.warnings)
        results.append({
            "path": path,
            "verdict": "verified" if ok else "rejected",
            "procs": {q: ("verified" if r.verified else "rejected") for q, r in report.procs.items()},
            "diagnostics": [d.to_json() for d in report.diagnostics],
            "warnings": [w.to_json() for w in report.warnings],
        })
        if not ok and worst == EXIT_OK:
            worst = EXIT_REJECTED
    _emit(args, lines, {"results": results, "exit": worst})
    return worst


def _outcome_payload(out):
    if isinstance(out, interp.Halted):
        return {"outcome": "halted", "values": [interp.format_value(v) for v in out.values],
                "leaked": sorted(out.leaked)}
    return {"outcome": "fault", "kind": out.kind.value, "proc": out.proc, "pc": out.pc,
            "message": out.message}


def cmd_run(args) -> int:
    prog = _load(args.path)
    entry = _resolve_entry(prog, args.entry)
    values = _parse_args_list(args.args)
    if not args.unsafe:
        report = verify_program(prog, widen_k=args.widen_k)
        if not report.verified:
            for d in report.diagnostics:
                print(d, file=sys.stderr)
            print("refusing to run an unverified program (use --unsafe)", file=sys.stderr)
            return EXIT_REJECTED
    try:
        out = interp.run(prog, entry, values, fuel=args.fuel)
    except interp.InitError as e:
        raise CliError(str(e)) from None
    payload = _outcome_payload(out)
    if isinstance(out, interp.Halted):
        lines = [interp.format_value(v) for v in out.values]
        if out.leaked:
            lines.append(f"leaked locations: {sorted(out.leaked)}")
        code = EXIT_OK if not out.leaked else EXIT_REJECTED
    else:
        lines = [str(out)]
        code = EXIT_REJECTED
    _emit(args, lines, payload)
    return code


def _corrupt(ann: dict) -> dict:
    """Test hook: erase every borrow edge from the annotations."""
    return {q: None if a is None else [None if ls is None else LocalState(ls.locals, ls.stack, EMPTY)
                                       for ls in a] for q, a in ann.items()}


def cmd_trace(args) -> int:
    prog = _load(args.path)
    entry = _resolve_entry(prog, args.entry)
    values = _parse_args_list(args.args)
    report = verify_program(prog, widen_k=args.widen_k)
    if not report.verified:
        for d in report.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_REJECTED
    ann = report.annotations
    if args.corrupt_annotations:
        ann = _corrupt(ann)
    try:
        s = interp.init_state(prog, entry, values)
    except interp.InitError as e:
        raise CliError(str(e)) from None
    rows = []
    status = EXIT_OK
    problems = check_invariants(prog, ann, s)
    steps = 0
    while True:
        line = interp.trace_line(prog, s) if s.callstack else "halted"
        rows.append({"step": steps, "line": line, "violations": [str(v) for v in problems]})
        if problems:
            status = EXIT_REJECTED
            break
        if steps >= args.fuel:
            break
        out = interp.step(prog, s)
        steps += 1
        if not isinstance(out, interp.Running):
            rows.append({"step": steps, "line": "end", "outcome": _outcome_payload(out), "violations": []})
            if isinstance(out, interp.Fault) and not out.kind.is_abort:
                status = EXIT_REJECTED
            if isinstance(out, interp.Halted) and out.leaked:
                status = EXIT_REJECTED
            break
        problems = check_invariants(prog, ann, s)
    lines = []
    for r in rows:
        if r["line"] == "end":
            lines.append(f"end: {json.dumps(r['outcome'], sort_keys=True)}")
        else:
            lines.append(f"{r['line']} inv={'ok' if not r['violations'] else '; '.join(r['violations'])}")
    _emit(args, lines, {"steps": rows, "exit": status})
    return status


def _fuzz_one(job):
    seed, budget, fuel, widen_k = job
    from .gen import generate_case
    case = generate_case(seed, budget)
    report = verify_program(case.program, widen_k=widen_k)
    row = {"seed": seed, "verdict": "verified" if report.verified else "rejected", "steps": 0}
    if report.verified:
        res = differential_run(case.program, report, case.entry, case.args, fuel=fuel)
        row["steps"] = res.steps
        if res.violation is not None:
            row["violation"] = str(res.violation)
    elif any(d.kind == "FixpointCeiling" for d in report.diagnostics):
        row["violation"] = "fixpoint ceiling reached"
    return row


def cmd_fuzz(args) -> int:
    jobs = [(s, args.budget, args.fuel, args.widen_k)
            for s in range(args.seed_start, args.seed_start + args.seed_count)]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_fuzz_one, jobs, chunksize=8))
    else:
        rows = [_fuzz_one(j) for j in jobs]
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for row in rows:
            out.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    bad = sum(1 for r in rows if "violation" in r)
    summary = (f"seeds={len(rows)} verified={sum(r['verdict'] == 'verified' for r in rows)} "
               f"violations={bad}")
    print(summary, file=sys.stderr)
    return EXIT_OK if bad == 0 else EXIT_REJECTED


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--widen-k", type=int, default=8, help="maximum fixed label length (default 8)")
    common.add_argument("--fuel", type=int, default=10000, help="maximum interpreter steps (default 10000)")

    p = argparse.ArgumentParser(prog="movebc", description="Verify bytecode programs and run them under invariant checks.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="verify assembly files")
    v.add_argument("paths", nargs="+")
    v.add_argument("--jobs", type=int, default=None)
    v.set_defaults(func=cmd_verify)

    for name, func, text in (("run", cmd_run, "execute a procedure"),
                             ("trace", cmd_trace, "execute with per-step invariant checks")):
        r = sub.add_parser(name, parents=[common], help=text)
        r.add_argument("path")
        r.add_argument("entry")
        r.add_argument("args", nargs="*", help="primitive literals: 7, true, 0x1")
        if name == "run":
            r.add_argument("--unsafe", action="store_true", help="skip verification")
        else:
            r.add_argument("--corrupt-annotations", action="store_true", help=argparse.SUPPRESS)
        r.set_defaults(func=func)

    f = sub.add_parser("fuzz", parents=[common], help="fuzz the verifier with generated programs")
    f.add_argument("--seed-start", type=int, default=0)
    f.add_argument("--seed-count", type=int, default=100)
    f.add_argument("--budget", type=int, default=10)
    f.add_argument("--jobs", type=int, default=None)
    f.add_argument("--output", "-o", default=None, help="write the JSON lines report here")
    f.set_defaults(func=cmd_fuzz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for flag in ("fuel", "widen_k"):
        if getattr(args, flag) < (0 if flag == "fuel" else 1):
            parser.error(f"--{flag.replace('_', '-')} is out of range")
    if getattr(args, "seed_count", 1) < 0:
        parser.error("--seed-count must be non-negative")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

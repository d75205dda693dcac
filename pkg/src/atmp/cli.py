"""Command line: check, project, typecheck, simulate and verify.

Exit codes: 0 pass, 1 verdict fails, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import frontend
from .calculus import ProcessSyntaxError, Restrict, cong_normalize, explore, free_sessions, parse_process
from .generators import DEFAULT_LIMITS, NotRealisable, canonical_process_of, gen_global_type, initial_state
from .projection import NotProjectable
from .semantics import canonical_env, check_completeness, check_safety, check_soundness, untimed_erase
from .timecore import TimeError, parse_time
from .typecheck import (
    PreconditionViolation,
    annotate,
    annotation_for,
    check_deadlock_freedom,
    check_subject_reduction,
    typecheck,
)

THEOREMS = ("association-sound", "association-complete", "safety", "deadlock-freedom", "subject-reduction")


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2)


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


def _protocol(path: str):
    return frontend.parse(_read(path))


def _grid(arg: str | None, processes: bool = False):
    """Grid from ATMP_GRID (which wins) or the flag: 'auto', 'full' or comma-separated delays.

    Process exploration has no separate full mode; it uses its own automatic grid."""
    raw = os.environ.get("ATMP_GRID") or arg or "auto"
    raw = raw.strip()
    if raw in ("auto", "full"):
        return "auto" if processes else raw
    try:
        pts = [parse_time(x) for x in raw.split(",") if x.strip()]
    except (TimeError, ValueError) as exc:
        raise UsageError(f"bad grid {raw!r}") from exc
    if not pts or any(t <= 0 for t in pts):
        raise UsageError(f"bad grid {raw!r}: delays must be positive")
    return pts


def _emit(args, payload: dict, text: str) -> None:
    print(_dump(payload) if args.json else text)


# -- commands ------------------------------------------------------------------------------------


def cmd_check(args) -> int:
    pf = _protocol(args.file)
    rep = frontend.check_protocol(pf)
    lines = [f"{pf.name}: {'ok' if rep.ok else 'rejected'}"]
    lines += [f"  {f['kind']}: {f['message']}" for f in rep.failures]
    lines += [f"  warning: {w}" for w in rep.warnings]
    if args.explain:
        lines += [f"  owner {r}: {', '.join(sorted(cs))}" for r, cs in sorted(rep.ownership.items())]
    _emit(args, {"protocol": pf.name, **rep.to_json()}, "\n".join(lines))
    return 0 if rep.ok else 1


def cmd_project(args) -> int:
    pf = _protocol(args.file)
    if args.role is not None and args.role not in pf.roles:
        raise UsageError(f"role {args.role} is not declared by {pf.name}")
    try:
        arts = frontend.emit(pf, args.role)
    except NotProjectable as exc:
        _emit(args, {"ok": False, "error": str(exc)}, f"not projectable: {exc}")
        return 1
    files = arts.files()
    if not args.dot:
        files.pop("protocol.dot")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in sorted(files.items()):
            (out / name).write_text(text, encoding="utf-8")
        _emit(args, {"ok": True, "written": sorted(files)},
              "\n".join(str(out / n) for n in sorted(files)))
        return 0
    from .types import local_to_json

    types = {r: local_to_json(t) for r, t in sorted(arts.types.items())}
    if args.role is not None:
        payload = types[args.role]
    else:
        payload = types
    if args.dot and not args.json:
        print(arts.dot, end="")
        return 0
    if args.dot:
        payload = {"types": types, "dot": arts.dot}
    print(_dump(payload))
    return 0


def _annotated(process, g):
    """Close the process over its sessions with annotations synthesised from g."""
    sessions = set(free_sessions(process))

    def bare(p):
        if isinstance(p, Restrict):
            if p.annotation is None:
                sessions.add(p.session)
            bare(p.body)
        for q in getattr(p, "procs", ()):
            bare(q)

    bare(process)
    state = initial_state(g)
    return annotate(process, {s: annotation_for(state, s) for s in sorted(sessions)})


def cmd_typecheck(args) -> int:
    process = parse_process(_read(args.procfile))
    pf = _protocol(args.protocol)
    p = _annotated(process, frontend.to_global(pf))
    rep = typecheck(p, explain=args.explain)
    if rep.ok:
        text = "well-typed"
    else:
        text = f"ill-typed: {rep.error.rule} at {rep.error.path}: {rep.error.premise}"
    if args.explain and rep.derivation:
        text += "\n" + "\n".join(rep.derivation)
    _emit(args, rep.to_json(), text)
    return 0 if rep.ok else 1


def state_hash(p) -> str:
    return hashlib.sha1(str(p).encode("utf-8")).hexdigest()[:10]


def cmd_simulate(args) -> int:
    p = parse_process(_read(args.procfile))
    rep = explore(p, depth=args.depth, grid=_grid(args.grid, processes=True))
    payload = rep.to_json()
    lines = [f"states {rep.states}, edges {rep.edges}, terminals {len(rep.terminals)}, "
             f"errors {len(rep.errors)}, truncated {rep.truncated}",
             "deadlock-free" if rep.deadlock_free else "not deadlock-free"]
    if args.trace:
        traces = []
        for t in rep.terminals + rep.errors:
            steps = rep.trace_to(t)
            prev = cong_normalize(p)
            dump = []
            lines.append(f"trace to {state_hash(t)}: {t}")
            for lab, nxt in steps:
                lines.append(f"  {state_hash(prev)} --{lab}--> {state_hash(nxt)}")
                dump.append({"from": state_hash(prev), "label": lab, "to": state_hash(nxt), "state": str(nxt)})
                prev = nxt
            traces.append({"end": str(t), "labels": [lab for lab, _ in steps], "steps": dump})
        payload["traces"] = traces
    for b in rep.bad_terminals + rep.errors:
        lines.append(f"  stuck or failing: {b}")
    _emit(args, payload, "\n".join(lines))
    return 0 if rep.deadlock_free else 1


def _verify_target(args):
    if args.file is None:
        if args.seed is None:
            raise UsageError("verify needs FILE or --seed")
        return f"generated(seed={args.seed})", gen_global_type(args.seed, _limits(args.limits))
    pf = _protocol(args.file)
    rep = frontend.check_protocol(pf)
    if not rep.ok:
        raise _Rejected(rep)
    return pf.name, frontend.to_global(pf)


def _limits(text: str | None) -> dict | None:
    """Generator limits such as "roles=3,depth=2,const=8"."""
    if not text:
        return None
    out = {}
    for item in text.split(","):
        key, _, val = item.partition("=")
        key = key.strip()
        if key not in DEFAULT_LIMITS or not val.strip():
            raise UsageError(f"bad limit {item.strip()!r}; known: {', '.join(sorted(DEFAULT_LIMITS))}")
        try:
            out[key] = type(DEFAULT_LIMITS[key])(val.strip())
        except ValueError as exc:
            raise UsageError(f"bad value for limit {key}: {val.strip()!r}") from exc
    return out


class _Rejected(Exception):
    def __init__(self, report):
        self.report = report


def cmd_verify(args) -> int:
    try:
        name, g = _verify_target(args)
    except _Rejected as exc:
        _emit(args, {"ok": False, "rejected": exc.report.to_json()},
              "protocol rejected: " + "; ".join(f["message"] for f in exc.report.failures))
        return 1
    th = args.theorem
    depth = args.depth
    grid = _grid(None)
    st = initial_state(g)
    if th in ("association-sound", "association-complete"):
        env = canonical_env(st)
        fn = check_soundness if th == "association-sound" else check_completeness
        rep = fn(st, env, depth=depth or 4, grid=grid)
        payload = rep.to_json()
        ok = rep.ok
        detail = rep.message or f"{rep.steps_checked} steps checked over {rep.nodes} states"
    elif th == "safety":
        ok, trace = check_safety(untimed_erase(canonical_env(st)), depth=depth or 6)
        payload = {"ok": ok, "counterexample": trace}
        detail = "every reachable untimed environment is safe" if ok else " → ".join(trace)
    else:
        try:
            p = canonical_process_of(g)
        except NotRealisable as exc:
            payload = {"ok": False, "error": f"no canonical process: {exc}"}
            _emit(args, payload, payload["error"])
            return 1
        try:
            pgrid = _grid(None, processes=True)
            if th == "deadlock-freedom":
                rep = check_deadlock_freedom(p, depth=depth or 14, grid=pgrid)
            else:
                rep = check_subject_reduction(p, steps=depth or 6, grid=pgrid)
        except PreconditionViolation as exc:
            payload = {"ok": False, "precondition": exc.to_json()}
            _emit(args, payload, str(exc))
            return 1
        payload = rep.to_json()
        ok = rep.ok
        detail = rep.message or f"{rep.checked} processes checked"
    payload["theorem"] = th
    payload["protocol"] = name
    text = f"{th} for {name}: {'holds' if ok else 'FAILS'} ({detail})"
    _emit(args, payload, text)
    return 0 if ok else 1


# -- entry point ---------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    json_errors = False

    def error(self, message):
        if _Parser.json_errors:
            print(_dump({"error": "usage", "message": message}))
            sys.exit(2)
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--explain", action="store_true", help="show derivations and reasons")
    ap = _Parser(prog="atmp", description="Timed asynchronous multiparty session toolkit.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("check", parents=[common], help="check a protocol file")
    p.add_argument("file")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("project", parents=[common], help="project a protocol onto its roles")
    p.add_argument("file")
    p.add_argument("--role")
    p.add_argument("--out", help="directory for <role>.type.json, <role>.cta.json, protocol.dot")
    p.add_argument("--dot", action="store_true", help="also produce the DOT graph")
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("typecheck", parents=[common], help="typecheck a process against a protocol")
    p.add_argument("procfile")
    p.add_argument("--protocol", required=True)
    p.set_defaults(fn=cmd_typecheck)

    p = sub.add_parser("simulate", parents=[common], help="explore the reductions of a process")
    p.add_argument("procfile")
    p.add_argument("--depth", type=int, default=14)
    p.add_argument("--grid", help="auto, full or comma-separated delays (ATMP_GRID wins)")
    p.add_argument("--trace", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="check a theorem on a protocol, bounded")
    p.add_argument("file", nargs="?")
    p.add_argument("--theorem", required=True, choices=THEOREMS)
    p.add_argument("--depth", type=int)
    p.add_argument("--seed", type=int, help="generate the protocol when FILE is omitted")
    p.add_argument("--limits", help="generator limits, e.g. roles=3,depth=2")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _Parser.json_errors = "--json" in argv
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, frontend.ParseError, ProcessSyntaxError) as exc:
        payload = exc.to_json() if hasattr(exc, "to_json") else {"error": "usage", "message": str(exc)}
        if getattr(args, "json", False):
            print(_dump(payload))
        else:
            print(f"atmp: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

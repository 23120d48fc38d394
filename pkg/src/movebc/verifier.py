"""Load-time verification: CFG construction, stack-height analysis, acquires checking,
and the borrow-analysis fixpoint that produces per-offset abstract-state annotations.

Every accepted procedure is re-certified after the fixpoint: each annotation must be
well-formed, the entry annotation must be the initial state, and propagating any
annotation must land below the annotation of every successor.
"""

from __future__ import annotations

import heapq
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from . import bgraph as bg
from .absdom import (
    LocalState, PropagationError, initial_state, ls_leq, propagate, stack_effect, well_formed,
)
from .ir import BorrowGlobal, Branch, Call, MoveFrom, Procedure, Program, Ret, validate_structure

VISIT_CEILING = 1000


@dataclass(frozen=True)
class Diagnostic:
    proc: str
    offset: Optional[int]
    kind: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        where = self.proc if self.offset is None else f"{self.proc}@{self.offset}"
        return f"{where}: {self.kind}: {self.message}"

    def to_json(self) -> dict:
        return {"proc": self.proc, "offset": self.offset, "kind": self.kind,
                "message": self.message, "severity": self.severity}


@dataclass(frozen=True)
class BasicBlock:
    id: int
    start: int
    end: int  # inclusive
    succs: tuple


@dataclass
class ProcResult:
    proc: str
    diagnostics: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    annotations: Optional[list] = None  # offset -> LocalState (None when unreachable)
    visits: int = 0
    max_block_visits: int = 0

    @property
    def verified(self) -> bool:
        return not self.diagnostics


@dataclass
class VerificationReport:
    procs: dict = field(default_factory=dict)  # qualname -> ProcResult
    program_diagnostics: list = field(default_factory=list)

    @property
    def verified(self) -> bool:
        return not self.program_diagnostics and all(r.verified for r in self.procs.values())

    @property
    def annotations(self) -> dict:
        return {q: r.annotations for q, r in self.procs.items()}

    @property
    def diagnostics(self) -> list:
        out = list(self.program_diagnostics)
        for q in sorted(self.procs):
            out.extend(self.procs[q].diagnostics)
        return out

    @property
    def warnings(self) -> list:
        return [w for q in sorted(self.procs) for w in self.procs[q].warnings]

    def verdict(self, qualname: str) -> bool:
        return self.procs[qualname].verified


# --------------------------------------------------------------------------- CFG


def successors(proc: Procedure, i: int) -> tuple:
    ins = proc.code[i]
    if isinstance(ins, Ret):
        return ()
    if isinstance(ins, Branch):
        return tuple(sorted({ins.if_true, ins.if_false}))
    return (i + 1,)


def build_cfg(proc: Procedure) -> list:
    code = proc.code
    leaders = {0}
    for i, ins in enumerate(code):
        if isinstance(ins, Branch):
            leaders.update((ins.if_true, ins.if_false))
        if isinstance(ins, (Branch, Ret)) and i + 1 < len(code):
            leaders.add(i + 1)
    starts = sorted(leaders)
    block_of = {s: k for k, s in enumerate(starts)}
    blocks = []
    for k, s in enumerate(starts):
        end = (starts[k + 1] if k + 1 < len(starts) else len(code)) - 1
        succs = tuple(block_of[j] for j in successors(proc, end))
        blocks.append(BasicBlock(k, s, end, succs))
    return blocks


def reverse_postorder(blocks: list) -> list:
    seen, order = set(), []
    stack = [(0, iter(blocks[0].succs))] if blocks else []
    if blocks:
        seen.add(0)
    while stack:
        b, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            order.append(b)
            stack.pop()
        elif nxt not in seen:
            seen.add(nxt)
            stack.append((nxt, iter(blocks[nxt].succs)))
    return order[::-1]


def check_stack_usage(prog: Program, proc: Procedure, blocks: list) -> list:
    q = proc.qualname
    diags = []
    entry = {0: 0}
    todo = [0]
    while todo:
        b = blocks[todo.pop()]
        h = entry[b.id]
        ok = True
        for i in range(b.start, b.end + 1):
            ins = proc.code[i]
            pops, pushes = stack_effect(prog, ins)
            if h < pops:
                diags.append(Diagnostic(q, i, "StackUnderflow", f"needs {pops} operand(s) at height {h}"))
                ok = False
                break
            h = h - pops + pushes
            if isinstance(ins, Ret) and h != len(proc.outs):
                diags.append(Diagnostic(q, i, "StackHeight",
                                        f"Ret at height {h}, expected {len(proc.outs)}"))
                ok = False
        if not ok:
            continue
        for s in b.succs:
            if s not in entry:
                entry[s] = h
                todo.append(s)
            elif entry[s] != h:
                diags.append(Diagnostic(q, blocks[s].start, "StackHeight",
                                        f"height mismatch at join: {entry[s]} vs {h}"))
    return diags


def check_acquires(prog: Program) -> tuple:
    """(errors, warnings) for the acquires annotations of every procedure."""
    errors, warnings = [], []
    for q in sorted(prog.procs):
        p = prog.proc(q)
        needed = set()
        for i, ins in enumerate(p.code):
            if isinstance(ins, (BorrowGlobal, MoveFrom)):
                needed.add(ins.record)
                if ins.record not in p.acquires:
                    errors.append(Diagnostic(q, i, "MissingAcquires",
                                             f"{type(ins).__name__} {ins.record} requires acquires {ins.record}"))
            elif isinstance(ins, Call):
                callee = prog.proc(ins.proc)
                if callee.module != p.module:
                    continue
                for t in callee.acquires:
                    needed.add(t)
                    if t not in p.acquires:
                        errors.append(Diagnostic(q, i, "MissingAcquires",
                                                 f"call to {callee.qualname} requires acquires {t}"))
        for t in sorted(set(p.acquires) - needed):
            warnings.append(Diagnostic(q, None, "ExtraAcquires", f"acquires {t} is not needed", "warning"))
    return errors, warnings


# --------------------------------------------------------------------------- borrow fixpoint


class JoinError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def join_states(a: LocalState, b: LocalState) -> LocalState:
    if a.locals != b.locals:
        raise JoinError("JoinMismatch", "local types differ at join point")
    if a.stack != b.stack:
        raise JoinError("JoinMismatch", "stack types differ at join point")
    try:
        return LocalState(a.locals, a.stack, bg.join(a.graph, b.graph))
    except bg.CycleError:
        raise JoinError("JoinCycle", "joined borrow graph has a cycle") from None


def _prop(prog, proc, i, ls):
    try:
        return propagate(prog, proc, proc.code[i], ls)
    except PropagationError as e:
        e.offset = i
        raise


def _diag(q, e: PropagationError) -> Diagnostic:
    at = f" at {e.position}" if e.position is not None else ""
    return Diagnostic(q, e.offset, e.kind, e.message + at)


def borrow_check(prog: Program, proc: Procedure, blocks: list, widen_k: int = 8) -> ProcResult:
    q = proc.qualname
    res = ProcResult(q)
    order = reverse_postorder(blocks)
    rank = {b: (k, blocks[b].start) for k, b in enumerate(order)}
    entry = {0: initial_state(proc)}
    visits = {}
    ann = [None] * len(proc.code)
    heap = [(rank[0], 0)]
    queued = {0}
    while heap:
        _, bid = heapq.heappop(heap)
        queued.discard(bid)
        visits[bid] = visits.get(bid, 0) + 1
        if visits[bid] > VISIT_CEILING:
            res.diagnostics.append(Diagnostic(q, blocks[bid].start, "FixpointCeiling",
                                              f"block visited more than {VISIT_CEILING} times"))
            break
        b = blocks[bid]
        ls = entry[bid]
        try:
            for i in range(b.start, b.end + 1):
                ann[i] = ls  # the last visit of a block sees its final entry state
                ls = _prop(prog, proc, i, ls)
        except PropagationError as e:
            res.diagnostics.append(_diag(q, e))
            break
        if not b.succs:
            continue
        out = ls.with_graph(bg.widen_paths(ls.graph, widen_k))
        failed = False
        for s in b.succs:
            old = entry.get(s)
            try:
                new = join_states(old, out) if old is not None else join_states(out, out)
            except JoinError as e:
                res.diagnostics.append(Diagnostic(q, blocks[s].start, e.kind, str(e)))
                failed = True
                break
            if old is None or new.graph != old.graph:
                entry[s] = new
                if s not in queued:
                    queued.add(s)
                    heapq.heappush(heap, (rank[s], s))
        if failed:
            break
    res.visits = sum(visits.values())
    res.max_block_visits = max(visits.values(), default=0)
    if res.diagnostics:
        return res

    for b in blocks:
        if b.id not in entry:
            res.warnings.append(Diagnostic(q, b.start, "Unreachable",
                                           f"offsets {b.start}..{b.end} are unreachable", "warning"))
    problems = certify(prog, proc, ann)
    if problems:
        res.diagnostics.extend(problems)
        return res
    res.annotations = ann
    return res


def certify(prog: Program, proc: Procedure, ann: list) -> list:
    """Re-check the well-typedness conditions on a complete set of annotations."""
    q = proc.qualname
    out = []
    checked = {}
    if ann[0] != initial_state(proc):
        out.append(Diagnostic(q, 0, "Certification", "entry annotation is not the initial state"))
    for i, ls in enumerate(ann):
        if ls is None:
            continue
        # states share their locals tuple and graph objects, which ``ann`` keeps alive
        key = (id(ls.locals), len(ls.stack), id(ls.graph))
        if key not in checked:
            checked[key] = well_formed(proc, ls)
        for reason in checked[key]:
            out.append(Diagnostic(q, i, "Certification", f"ill-formed annotation: {reason}"))
        try:
            nxt = propagate(prog, proc, proc.code[i], ls)
        except PropagationError as e:
            out.append(Diagnostic(q, i, "Certification", f"propagation fails: {e}"))
            continue
        for j in successors(proc, i):
            target = ann[j]
            if target is None or (nxt != target and not ls_leq(nxt, target)):
                out.append(Diagnostic(q, i, "Certification", f"result not below annotation at {j}"))
    return out


# --------------------------------------------------------------------------- driver


def verify_procedure(prog: Program, proc: Procedure, widen_k: int = 8) -> ProcResult:
    blocks = build_cfg(proc)
    stack_diags = check_stack_usage(prog, proc, blocks)
    if stack_diags:
        return ProcResult(proc.qualname, diagnostics=stack_diags)
    return borrow_check(prog, proc, blocks, widen_k)


def _verify_one(args):
    prog, q, widen_k = args
    return verify_procedure(prog, prog.proc(q), widen_k)


def verify_program(prog: Program, widen_k: int = 8, jobs: Optional[int] = None) -> VerificationReport:
    report = VerificationReport()
    structural = validate_structure(prog)
    if structural:
        report.program_diagnostics = [
            Diagnostic(d.proc or "<program>", d.offset, "Structure", d.message) for d in structural
        ]
        return report
    acq_errors, acq_warnings = check_acquires(prog)
    names = sorted(prog.procs)
    if jobs and jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_verify_one, [(prog, q, widen_k) for q in names]))
    else:
        results = [verify_procedure(prog, prog.proc(q), widen_k) for q in names]
    for q, r in zip(names, results):
        errs = [d for d in acq_errors if d.proc == q]
        if errs:
            r.diagnostics = errs + r.diagnostics
            r.annotations = None
        r.warnings = [w for w in acq_warnings if w.proc == q] + r.warnings
        report.procs[q] = r
    return report

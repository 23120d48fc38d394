"""Soundness harness: abstraction of concrete states, the four safety invariants,
and a differential runner that checks them after every interpreter step.

Global cells take part in the invariants as positions of their own. The abstract
node standing for record type ``T`` in frame ``k`` is ``GlobalNode(T, k)``; a cell of
``T`` is represented by the node of the topmost frame whose procedure acquires ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import bgraph as bg
from .absdom import PropagationError, ls_leq, propagate
from .bgraph import BorrowGraph, Edge, GlobalNode, Local, Stack
from .interp import (
    Fault, FaultKind, Halted, InitError, Ref, State, current_instr, init_state, read_path,
    step, value_has_type,
)
from .ir import Call, Path, Program, RecordType, RefType, Ret, is_imm_ref, is_mut_ref, is_ref


class HarnessError(Exception):
    """The concrete state does not fit the annotations (a harness or verifier bug)."""


@dataclass
class AbstractState:
    frames: list  # of (proc, pc, local types)
    stack: tuple
    graph: BorrowGraph

    def type_at(self, pos):
        if pos.kind == bg.LOCAL:
            return self.frames[pos.frame][2][pos.index]
        if pos.kind == bg.STACK:
            return self.stack[pos.index]
        return RecordType(pos.name)


@dataclass(frozen=True)
class GlobalCell:
    name: str
    addr: object

    def __str__(self) -> str:
        return f"{self.name}@{self.addr}"


@dataclass(frozen=True)
class InvariantViolation:
    invariant: str
    message: str
    positions: tuple = ()
    step: Optional[int] = None

    def __str__(self) -> str:
        at = f" at step {self.step}" if self.step is not None else ""
        pos = f" [{', '.join(map(str, self.positions))}]" if self.positions else ""
        return f"{self.invariant}{at}: {self.message}{pos}"


def abstract_state(prog: Program, ann: dict, s: State) -> AbstractState:
    frames, stack, edges = [], [], []
    base = 0
    depth = len(s.callstack)
    for k, f in enumerate(s.callstack):
        anns = ann.get(f.proc)
        ls = anns[f.pc] if anns is not None and 0 <= f.pc < len(anns) else None
        if ls is None:
            raise HarnessError(f"no annotation for {f.proc}@{f.pc}")
        S, G = ls.stack, ls.graph
        if k < depth - 1:
            callee = prog.proc(s.callstack[k + 1].proc)
            instr = prog.proc(f.proc).code[f.pc]
            if not isinstance(instr, Call) or instr.proc != callee.qualname:
                raise HarnessError(f"{f.proc}@{f.pc} is not a call to {callee.qualname}")
            keep = len(S) - len(callee.ins)
            G = bg.rename(G, {Stack(keep + i): Local(1, i) for i in range(len(callee.ins))})
            S = S[:keep]

        def shift(p, k=k, base=base):
            if p.kind == bg.LOCAL:
                return Local(p.frame + k, p.index)
            if p.kind == bg.STACK:
                return Stack(p.index + base)
            return GlobalNode(p.name, k)

        edges.extend(Edge(shift(e.src), e.label, shift(e.dst)) for e in G.edges)
        frames.append((f.proc, f.pc, ls.locals))
        stack.extend(S)
        base += len(S)
    return AbstractState(frames, tuple(stack), BorrowGraph(edges))


# --------------------------------------------------------------------------- realized edges


def _base_of(s: State, pos):
    """(location, path) denoted by a position, or None when it holds a plain value."""
    if pos.kind == bg.LOCAL:
        frame = s.callstack[pos.frame] if pos.frame < len(s.callstack) else None
        v = frame.locals[pos.index] if frame is not None and pos.index < len(frame.locals) else None
    elif pos.kind == bg.STACK:
        v = s.operands[pos.index] if pos.index < len(s.operands) else None
    else:
        return None
    if isinstance(v, Ref):
        return (v.loc, v.path)
    if isinstance(v, int) and not isinstance(v, bool) and pos.kind == bg.LOCAL:
        return (v, ())
    return None


def _value_at(s: State, pos):
    if pos.kind == bg.LOCAL:
        if pos.frame >= len(s.callstack):
            return None
        locs = s.callstack[pos.frame].locals
        return locs[pos.index] if pos.index < len(locs) else None
    if pos.kind == bg.STACK:
        return s.operands[pos.index] if pos.index < len(s.operands) else None
    return None


def edge_realized(s: State, m, n, label: Path) -> bool:
    """Does ``label`` lead from the contents of ``m`` to the reference held at ``n``?"""
    target = _value_at(s, n)
    if not isinstance(target, Ref):
        return False
    if m.kind == bg.GLOBAL:
        return label.matches(target.path) and any(
            name == m.name and c == target.loc for (name, _), c in s.globals.items()
        )
    src = _base_of(s, m)
    if src is None or src[0] != target.loc:
        return False
    return Path(src[1]).concat(label).matches(target.path)


def _reach(succ: dict, start) -> set:
    seen, todo = set(), [start]
    while todo:
        for nxt in succ.get(todo.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return seen


# --------------------------------------------------------------------------- invariants


def _type_matches(prog: Program, s: State, v, t) -> bool:
    if isinstance(t, RefType):
        if not isinstance(v, Ref) or v.loc not in s.memory:
            return False
        try:
            return value_has_type(prog, read_path(s.memory[v.loc], v.path), t.target)
        except KeyError:
            return False
    return not isinstance(v, Ref) and value_has_type(prog, v, t)


def check_invariants(prog: Program, ann: dict, s: State) -> list:
    try:
        a = abstract_state(prog, ann, s)
    except HarnessError as e:
        return [InvariantViolation("Abstraction", str(e))]
    out = []

    # shape and type agreement
    if len(a.stack) != len(s.operands):
        out.append(InvariantViolation("TypeAgreement", f"stack height {len(s.operands)} vs abstract {len(a.stack)}"))
        return out
    positions = []  # (pos, type, concrete binding)
    for k, (f, (proc, pc, types)) in enumerate(zip(s.callstack, a.frames)):
        for y, (b, t) in enumerate(zip(f.locals, types)):
            if (b is None) != (t is None):
                out.append(InvariantViolation("TypeAgreement", f"local domain differs in frame {k}", (Local(k, y),)))
            elif b is not None:
                positions.append((Local(k, y), t, b))
    for x, (v, t) in enumerate(zip(s.operands, a.stack)):
        positions.append((Stack(x), t, v))
    for pos, t, b in positions:
        v = b if isinstance(b, Ref) or pos.kind == bg.STACK else s.memory.get(b)
        if (pos.kind == bg.LOCAL and not isinstance(b, Ref) and b not in s.memory) or \
                not _type_matches(prog, s, v, t):
            out.append(InvariantViolation("TypeAgreement", f"value does not have type {t}", (pos,)))
    for (name, addr), c in s.globals.items():
        if c not in s.memory or not value_has_type(prog, s.memory[c], RecordType(name)):
            out.append(InvariantViolation("TypeAgreement", f"global {name} at {addr} has the wrong type"))
    if out:
        return out

    # no leaks: locations in locals and global cells are a bijection onto memory
    owners = {}
    for pos, _, b in positions:
        if pos.kind == bg.LOCAL and not isinstance(b, Ref):
            if b in owners:
                out.append(InvariantViolation("Ownership", f"location c{b} is owned twice", (owners[b], pos)))
            owners[b] = pos
    for key, c in s.globals.items():
        if c in owners:
            out.append(InvariantViolation("Ownership", f"global location c{c} is also owned by a local"))
        owners[c] = key
    if set(owners) != set(s.memory):
        extra = sorted(set(s.memory) - set(owners))
        missing = sorted(set(owners) - set(s.memory))
        out.append(InvariantViolation("Ownership", f"unowned locations {extra}, missing locations {missing}"))

    # no dangling references
    g = a.graph
    if not g.is_acyclic():
        out.append(InvariantViolation("NoDangling", "borrow graph has a cycle"))
    realized = [e for e in g.edges if edge_realized(s, e.src, e.dst, e.label)]
    has_realized_in = {e.dst for e in realized}
    for e in g.edges:
        if e.dst.kind == bg.GLOBAL or not is_ref(a.type_at(e.dst)):
            out.append(InvariantViolation("NoDangling", f"edge {e} points into a value", (e.dst,)))
    for pos, t, _ in positions:
        if is_ref(t) and pos not in has_realized_in:
            out.append(InvariantViolation("NoDangling", "reference has no realized borrow edge into it", (pos,)))

    # referential transparency
    succ = {}
    for e in realized:
        succ.setdefault(e.src, set()).add(e.dst)
    reach_cache = {}

    def reaches(x, y) -> bool:
        if x not in reach_cache:
            reach_cache[x] = _reach(succ, x)
        return y in reach_cache[x]

    owner_frame = {}
    for k in range(len(s.callstack) - 1, -1, -1):
        for name in prog.proc(s.callstack[k].proc).acquires:
            owner_frame.setdefault(name, k)
    cells = [(GlobalCell(name, addr), RecordType(name), c,
              GlobalNode(name, owner_frame[name]) if name in owner_frame else None)
             for (name, addr), c in s.globals.items()]
    entries = [(pos, t, b, pos) for pos, t, b in positions] + cells
    for n, tn, rn, _ in entries:
        if not is_ref(tn):
            continue
        for m, tm, bm, node in entries:
            if m == n:
                continue
            if isinstance(bm, Ref):
                if not bm.leq(rn):
                    continue
            elif isinstance(m, GlobalCell) or m.kind == bg.LOCAL:
                if bm != rn.loc:
                    continue
            else:
                continue
            if is_imm_ref(tm) and is_imm_ref(tn):
                continue
            if not is_imm_ref(tm) and node is not None and reaches(node, n):
                continue
            if bm == rn and reaches(n, node):
                continue
            out.append(InvariantViolation("PathWitness", f"{m} overlaps {n} without a witnessing path", (m, n)))

    # no realized path from an immutable reference to a mutable one
    for pos, t, _ in positions:
        if is_imm_ref(t):
            for q in _reach(succ, pos):
                if q != pos and q.kind != bg.GLOBAL and is_mut_ref(a.type_at(q)):
                    out.append(InvariantViolation("ImmutableReach", "immutable reference reaches a mutable one", (pos, q)))
    return out


# --------------------------------------------------------------------------- differential run


@dataclass
class DiffResult:
    steps: int = 0
    outcome: object = None
    violation: Optional[InvariantViolation] = None
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.violation is None

    @property
    def status(self) -> str:
        if self.violation is not None:
            return "violation"
        if isinstance(self.outcome, Halted):
            return "halted"
        if isinstance(self.outcome, Fault):
            return "fuel" if self.outcome.kind is FaultKind.FuelExhausted else "abort"
        return "running"


def _alias_check(prog: Program, s: State, instr: Call) -> Optional[str]:
    callee = prog.proc(instr.proc)
    n = len(callee.ins)
    args = s.operands[len(s.operands) - n:] if n else []
    for i, (a, t) in enumerate(zip(args, callee.ins)):
        if not (is_mut_ref(t) and isinstance(a, Ref)):
            continue
        for j, b in enumerate(args):
            if j != i and isinstance(b, Ref) and (a.leq(b) or b.leq(a)):
                return f"mutable argument {i} of {callee.qualname} overlaps argument {j}"
    return None


def differential_run(prog: Program, report, entry: str, args, fuel: int = 10000,
                     record_trace: bool = False) -> DiffResult:
    """Run a verified program, checking every invariant after every step."""
    ann = report.annotations if hasattr(report, "annotations") else report
    res = DiffResult()
    try:
        s = init_state(prog, entry, args)
    except InitError as e:
        res.violation = InvariantViolation("Init", str(e))
        return res

    def fail(kind, msg, positions=()):
        res.violation = InvariantViolation(kind, msg, tuple(positions), res.steps)
        return res

    problems = check_invariants(prog, ann, s)
    if problems:
        res.violation = problems[0]
        return res
    for _ in range(fuel):
        frame = s.top
        proc, pc = frame.proc, frame.pc
        instr = current_instr(prog, s)
        before = ann[proc][pc] if ann.get(proc) else None
        if isinstance(instr, Call):
            msg = _alias_check(prog, s, instr)
            if msg:
                return fail("MutAlias", msg)
        depth = len(s.callstack)
        out = step(prog, s)
        res.steps += 1
        if record_trace:
            res.trace.append(f"pc={pc} proc={proc} instr={type(instr).__name__} stack={len(s.operands)}")
        if isinstance(out, Fault):
            res.outcome = out
            if out.kind.is_abort:
                return res
            return fail("Fault", str(out))
        if isinstance(out, Halted):
            res.outcome = out
            if out.leaked:
                return fail("Leak", f"locations {sorted(out.leaked)} leaked at halt")
            return res
        if not isinstance(instr, (Call, Ret)) and len(s.callstack) == depth and before is not None:
            after = ann[proc][s.top.pc]
            try:
                nxt = propagate(prog, prog.proc(proc), instr, before)
            except PropagationError as e:
                return fail("Commutation", f"annotation at {proc}@{pc} does not propagate: {e}")
            if after is None or not ls_leq(nxt, after):
                return fail("Commutation", f"{proc}@{pc} -> {s.top.pc} leaves the annotation order")
        problems = check_invariants(prog, ann, s)
        if problems:
            v = problems[0]
            res.violation = InvariantViolation(v.invariant, v.message, v.positions, res.steps)
            return res
    f = s.top
    res.outcome = Fault(FaultKind.FuelExhausted, f.proc, f.pc, f"no result after {fuel} steps")
    return res

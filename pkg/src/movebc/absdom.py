"""Local abstract states and the per-instruction propagation rules of the borrow checker."""

from __future__ import annotations

from typing import NamedTuple, Optional

from . import bgraph as bg
from .bgraph import EMPTY, BorrowGraph, Edge, GlobalNode, Local, Stack
from .ir import (
    ADDR, BOOL, BorrowField, BorrowGlobal, BorrowLoc, Branch, Call, CopyLoc, FreezeRef, LdConst,
    MoveFrom, MoveLoc, MoveTo, Op, Pack, Path, Pop, Procedure, Program, ReadRef,
    RecordType, Ret, StoreLoc, Unpack, WriteRef, const_type, imm_ref, is_imm_ref,
    is_mut_ref, is_ref, mut_ref,
)


class LocalState(NamedTuple):
    """Types of the locals and operand stack plus the borrow graph (built once per instruction)."""

    locals: tuple  # per local index: Type or None
    stack: tuple
    graph: BorrowGraph = EMPTY

    def type_at(self, pos):
        if pos.kind == bg.LOCAL:
            return self.locals[pos.index] if pos.frame == 0 and pos.index < len(self.locals) else None
        if pos.kind == bg.STACK:
            return self.stack[pos.index] if pos.index < len(self.stack) else None
        return RecordType(pos.name)

    def with_graph(self, g: BorrowGraph) -> "LocalState":
        return LocalState(self.locals, self.stack, g)

    def describe(self) -> str:
        locs = ", ".join(f"{i}: {t}" for i, t in enumerate(self.locals) if t is not None)
        stk = ", ".join(str(t) for t in self.stack)
        return f"locals {{{locs}}} stack [{stk}] graph {{{', '.join(str(e) for e in self.graph)}}}"


class PropagationError(Exception):
    def __init__(self, kind: str, message: str, position=None, offset: Optional[int] = None):
        super().__init__(message)
        self.kind = kind
        self.message = message
        self.position = position
        self.offset = offset

    def __str__(self) -> str:
        at = f" at {self.position}" if self.position is not None else ""
        return f"{self.kind}: {self.message}{at}"


def initial_state(proc: Procedure) -> LocalState:
    return LocalState(tuple(proc.ins) + (None,) * (proc.locals_count - len(proc.ins)), (), EMPTY)


def ls_leq(a: LocalState, b: LocalState) -> bool:
    return a.locals == b.locals and a.stack == b.stack and bg.graph_leq(a.graph, b.graph)


def freezable(ls: LocalState, pos, _seen=None) -> bool:
    """Every reference borrowed from ``pos`` is immutable, and transitively freezable."""
    seen = _seen if _seen is not None else set()
    for v in ls.graph.borrowed_targets(pos):
        if v in seen:
            continue
        seen.add(v)
        if not is_imm_ref(ls.type_at(v)) or not freezable(ls, v, seen):
            return False
    return True


def well_formed(proc: Procedure, ls: LocalState) -> list:
    """Reasons ``ls`` is not well-formed for ``proc`` (empty list if it is)."""
    problems = []
    for i in range(len(proc.ins)):
        if i >= len(ls.locals) or ls.locals[i] is None:
            problems.append(f"input {i} is unbound")
    if not ls.graph.is_acyclic():
        problems.append("borrow graph has a cycle")
    acquired = set(proc.acquires)

    def in_dom(p):
        if p.kind == bg.LOCAL:
            return p.frame == 0 and p.index < len(ls.locals) and ls.locals[p.index] is not None
        if p.kind == bg.STACK:
            return p.index < len(ls.stack)
        return p.frame == 0 and p.name in acquired

    for e in ls.graph:
        for p in (e.src, e.dst):
            if not in_dom(p):
                problems.append(f"edge {e} has endpoint {p} outside the domain")
        if e.dst.kind == bg.LOCAL and e.dst.index < len(proc.ins):
            problems.append(f"edge {e} points into an input")
    return problems


# --------------------------------------------------------------------------- propagation


def _err(kind, msg, pos=None):
    raise PropagationError(kind, msg, pos)


def _need(ls: LocalState, n: int, what: str):
    if len(ls.stack) < n:
        _err("StackUnderflow", f"{what} needs {n} operand(s), stack has {len(ls.stack)}")


def _bound(ls: LocalState, x: int):
    t = ls.locals[x] if 0 <= x < len(ls.locals) else None
    if t is None:
        _err("UnboundLocal", f"local {x} is not available", Local(0, x))
    return t


def _expect(actual, expected, what: str):
    if actual != expected:
        _err("TypeMismatch", f"{what}: expected {expected}, found {actual}")


def _set(seq: tuple, i: int, v) -> tuple:
    return seq[:i] + (v,) + seq[i + 1:]


def propagate(prog: Program, proc: Procedure, instr, ls: LocalState) -> LocalState:
    """Apply the rule for ``instr`` to ``ls`` or raise PropagationError."""
    rule = _RULES.get(type(instr))
    if rule is None:  # pragma: no cover
        _err("TypeMismatch", f"unknown instruction {instr!r}")
    return rule(prog, proc, instr, ls)


def _rule_move_loc(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    new = Stack(n)
    x = instr.local
    t = _bound(ls, x)
    px = Local(0, x)
    if not is_ref(t) and not B.unborrowed(px):
        _err("MovedBorrowedValue", f"local {x} is moved while borrowed", px)
    if proc.is_input(x):
        _err("InputOverwrite", f"input {x} cannot be moved", px)
    return LocalState(_set(L, x, None), S + (t,), bg.rename(B, {px: new}))


def _rule_copy_loc(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    new = Stack(n)
    x = instr.local
    t = _bound(ls, x)
    if is_ref(t):
        B = bg.factor(B, Local(0, x), new)
    return LocalState(L, S + (t,), B)


def _rule_store_loc(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    top = Stack(n - 1)
    x = instr.local
    _need(ls, 1, "StoreLoc")
    t = S[-1]
    if not 0 <= x < len(L):
        _err("UnboundLocal", f"local {x} does not exist")
    old = L[x]
    if old is not None:
        _expect(t, old, f"StoreLoc {x}")
    px = Local(0, x)
    if proc.is_input(x):
        _err("InputOverwrite", f"input {x} cannot be overwritten", px)
    if old is not None:
        if is_ref(old):
            B = bg.elim(B, px)
        elif not B.unborrowed(px):
            _err("OverwriteBorrowedValue", f"local {x} is overwritten while borrowed", px)
    return LocalState(_set(L, x, t), S[:-1], bg.rename(B, {top: px}))


def _rule_borrow_loc(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    new = Stack(n)
    x = instr.local
    t = _bound(ls, x)
    if is_ref(t):
        _err("TypeMismatch", f"BorrowLoc of reference local {x}", Local(0, x))
    return LocalState(L, S + (mut_ref(t),), bg.factor(B, Local(0, x), new))


def _rule_borrow_field(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    new = Stack(n)
    x = instr.local
    t = _bound(ls, x)
    if not is_ref(t) or not isinstance(t.target, RecordType):
        _err("TypeMismatch", f"BorrowField needs a reference to a record in local {x}", Local(0, x))
    ft = prog.record(t.target.name).field_type(instr.field)
    if ft is None:
        _err("TypeMismatch", f"record {t.target} has no field {instr.field}")
    px = Local(0, x)
    if t.mutable:
        try:
            B = bg.factor_field(B, instr.field, px, new)
        except bg.FactorFieldFailure as e:
            _err("FactorFieldFailure", str(e), px)
        return LocalState(L, S + (mut_ref(ft),), B)
    return LocalState(L, S + (imm_ref(ft),), B.add(Edge(px, Path((instr.field,)), new)))


def _rule_read_ref(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    top = Stack(n - 1)
    _need(ls, 1, "ReadRef")
    t = S[-1]
    if not is_ref(t):
        _err("TypeMismatch", f"ReadRef of non-reference {t}", top)
    if not freezable(ls, top):
        _err("NotFreezable", "read through a reference with live mutable borrows", top)
    return LocalState(L, S[:-1] + (t.target,), bg.elim(B, top))


def _rule_write_ref(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    top = Stack(n - 1)
    _need(ls, 2, "WriteRef")
    t = S[-1]
    if not is_mut_ref(t):
        _err("TypeMismatch", f"WriteRef through {t}", top)
    _expect(S[-2], t.target, "WriteRef value")
    if not B.unborrowed(top):
        _err("WriteBorrowedRef", "write through a borrowed reference", top)
    B = bg.elim(bg.elim(B, top), Stack(n - 2))
    return LocalState(L, S[:-2], B)


def _rule_freeze_ref(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    top = Stack(n - 1)
    _need(ls, 1, "FreezeRef")
    t = S[-1]
    if not is_mut_ref(t):
        _err("TypeMismatch", f"FreezeRef of {t}", top)
    if not freezable(ls, top):
        _err("NotFreezable", "reference has live mutable borrows", top)
    return LocalState(L, S[:-1] + (imm_ref(t.target),), B)


def _rule_pop(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    top = Stack(n - 1)
    _need(ls, 1, "Pop")
    return LocalState(L, S[:-1], bg.elim(B, top))


def _rule_pack(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    decl = prog.record(instr.record)
    k = len(decl.fields)
    _need(ls, k, f"Pack {decl.name}")
    _expect(tuple(S[n - k:]), tuple(ft for _, ft in decl.fields), f"Pack {decl.name}")
    return LocalState(L, S[:n - k] + (RecordType(decl.name),), B)


def _rule_unpack(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    decl = prog.record(instr.record)
    _need(ls, 1, f"Unpack {decl.name}")
    _expect(S[-1], RecordType(decl.name), "Unpack")
    return LocalState(L, S[:-1] + tuple(ft for _, ft in decl.fields), B)


def _rule_op(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    k = len(instr.args)
    _need(ls, k, f"Op {instr.opcode}")
    _expect(tuple(S[n - k:]), tuple(instr.args), f"Op {instr.opcode}")
    return LocalState(L, S[:n - k] + (instr.result,), B)


def _rule_ld_const(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    return LocalState(L, S + (const_type(instr.value),), B)


def _rule_branch(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    _need(ls, 1, "Branch")
    _expect(S[-1], BOOL, "Branch condition")
    return LocalState(L, S[:-1], B)


def _rule_ret(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    _need(ls, 0, "Ret")
    if S != tuple(proc.outs):
        _err("RetStackMismatch", f"stack [{', '.join(map(str, S))}] does not match outputs "
                                 f"[{', '.join(map(str, proc.outs))}]")
    for i, t in enumerate(L):
        if t is not None and not is_ref(t) and not B.unborrowed(Local(0, i)):
            _err("RetBorrowedLocal", f"local {i} is still borrowed at return", Local(0, i))
    for name in proc.acquires:
        g = GlobalNode(name)
        if not B.unborrowed(g):
            _err("GlobalBorrowed", f"global {name} is still borrowed at return", g)
    for i, t in enumerate(S):
        if is_mut_ref(t) and not B.unborrowed(Stack(i)):
            _err("RetBorrowedMutOutput", f"mutable output {i} is borrowed", Stack(i))
    return ls


def _rule_global_access(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    n = len(S)
    top = Stack(n - 1)
    cls = type(instr)
    name = instr.record
    _need(ls, 1, cls.__name__)
    _expect(S[-1], ADDR, f"{cls.__name__} address")
    if name not in proc.acquires:
        _err("MissingAcquires", f"{cls.__name__} {name} without acquires {name}")
    g = GlobalNode(name)
    if not B.unborrowed(g):
        _err("GlobalBorrowed", f"global {name} is borrowed", g)
    if cls is MoveFrom:
        return LocalState(L, S[:-1] + (RecordType(name),), B)
    return LocalState(L, S[:-1] + (mut_ref(RecordType(name)),), bg.factor(B, g, top))


def _rule_move_to(prog, proc, instr, ls):
    L, S, B = ls.locals, ls.stack, ls.graph
    _need(ls, 2, "MoveTo")
    _expect(S[-1], RecordType(instr.record), "MoveTo value")
    _expect(S[-2], ADDR, "MoveTo address")
    return LocalState(L, S[:-2], B)



def _call(prog: Program, proc: Procedure, instr: Call, ls: LocalState) -> LocalState:
    L, S, B = ls.locals, ls.stack, ls.graph
    callee = prog.proc(instr.proc)
    k = len(callee.ins)
    _need(ls, k, f"Call {callee.qualname}")
    base = len(S) - k
    _expect(tuple(S[base:]), tuple(callee.ins), f"Call {callee.qualname} arguments")
    for i, t in enumerate(callee.ins):
        if is_mut_ref(t) and not B.unborrowed(Stack(base + i)):
            _err("BorrowedMutArg", f"mutable argument {i} is borrowed", Stack(base + i))
    if callee.module == proc.module:
        for name in callee.acquires:
            g = GlobalNode(name)
            if name not in proc.acquires:
                _err("MissingAcquires", f"call to {callee.qualname} acquiring {name} without acquires")
            if not B.unborrowed(g):
                _err("GlobalBorrowed", f"global {name} is borrowed across a call to {callee.qualname}", g)
    params = [Local(1, i) for i in range(k)]
    B = bg.rename(B, {Stack(base + i): params[i] for i in range(k)})
    outs = [Stack(base + j) for j in range(len(callee.outs))]
    mut_ins = [params[i] for i, t in enumerate(callee.ins) if is_mut_ref(t)]
    ref_ins = [params[i] for i, t in enumerate(callee.ins) if is_ref(t)]
    B = bg.extend_star(B, mut_ins, [o for o, t in zip(outs, callee.outs) if is_mut_ref(t)])
    B = bg.extend_star(B, ref_ins, [o for o, t in zip(outs, callee.outs) if is_imm_ref(t)])
    B = bg.elim_all(B, params)
    return LocalState(L, S[:base] + tuple(callee.outs), B)

_RULES = {
    MoveLoc: _rule_move_loc,
    CopyLoc: _rule_copy_loc,
    StoreLoc: _rule_store_loc,
    BorrowLoc: _rule_borrow_loc,
    BorrowField: _rule_borrow_field,
    ReadRef: _rule_read_ref,
    WriteRef: _rule_write_ref,
    FreezeRef: _rule_freeze_ref,
    Pop: _rule_pop,
    Pack: _rule_pack,
    Unpack: _rule_unpack,
    Op: _rule_op,
    LdConst: _rule_ld_const,
    Branch: _rule_branch,
    Call: _call,
    Ret: _rule_ret,
    BorrowGlobal: _rule_global_access,
    MoveFrom: _rule_global_access,
    MoveTo: _rule_move_to,
}


def stack_effect(prog: Program, instr) -> tuple:
    """(pops, pushes) of an instruction, independent of types."""
    cls = type(instr)
    if cls in (MoveLoc, CopyLoc, BorrowLoc, BorrowField, LdConst):
        return (0, 1)
    if cls in (StoreLoc, Pop, Branch):
        return (1, 0)
    if cls in (ReadRef, FreezeRef, MoveFrom, BorrowGlobal):
        return (1, 1)
    if cls in (WriteRef, MoveTo):
        return (2, 0)
    if cls is Pack:
        return (len(prog.record(instr.record).fields), 1)
    if cls is Unpack:
        return (1, len(prog.record(instr.record).fields))
    if cls is Op:
        return (len(instr.args), 1)
    if cls is Call:
        callee = prog.proc(instr.proc)
        return (len(callee.ins), len(callee.outs))
    if cls is Ret:
        return (0, 0)
    raise TypeError(f"unknown instruction {instr!r}")

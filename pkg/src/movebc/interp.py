"""Concrete stack-machine interpreter with explicit fault detection.

Locals hold either a memory location (an ``int``) or a :class:`Ref`; the shared
operand stack holds values inline or references; memory maps locations to values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

from . import ir
from .ir import (
    ADDR, BOOL, INT, Address, BorrowField, BorrowGlobal, BorrowLoc, Branch, Call, CopyLoc,
    FreezeRef, LdConst, MoveFrom, MoveLoc, MoveTo, Op, Pack, Pop, PrimType, Program, ReadRef,
    RecordType, RefType, Ret, StoreLoc, Unpack, WriteRef,
)


@dataclass(frozen=True)
class Record:
    name: str
    fields: tuple  # of (field name, value)

    def get(self, f: str):
        for n, v in self.fields:
            if n == f:
                return v
        raise KeyError(f)

    def replace(self, f: str, value) -> "Record":
        return Record(self.name, tuple((n, value if n == f else v) for n, v in self.fields))

    def __str__(self) -> str:
        body = ", ".join(f"{n}: {format_value(v)}" for n, v in self.fields)
        return f"{self.name} {{ {body} }}"


@dataclass(frozen=True)
class Ref:
    loc: int
    path: tuple = ()

    def __str__(self) -> str:
        return f"&c{self.loc}" + "".join("." + f for f in self.path)

    def leq(self, other: "Ref") -> bool:
        return self.loc == other.loc and other.path[: len(self.path)] == self.path


Value = Union[bool, int, Address, Record]


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def value_type(v) -> ir.ValType:
    if isinstance(v, bool):
        return BOOL
    if isinstance(v, int):
        return INT
    if isinstance(v, Address):
        return ADDR
    if isinstance(v, Record):
        return RecordType(v.name)
    raise TypeError(f"not a value: {v!r}")


def value_has_type(prog: Program, v, t) -> bool:
    """Deep check that value ``v`` inhabits value type ``t``."""
    if isinstance(t, PrimType):
        return not isinstance(v, (Record, Ref)) and value_type(v) == t
    if isinstance(t, RecordType) and isinstance(v, Record) and v.name == t.name:
        decl = prog.records.get(t.name)
        if decl is None or len(decl.fields) != len(v.fields):
            return False
        return all(n == fn and value_has_type(prog, fv, ft)
                   for (fn, ft), (n, fv) in zip(decl.fields, v.fields))
    return False


def read_path(v, path: tuple):
    for f in path:
        if not isinstance(v, Record):
            raise KeyError(f)
        v = v.get(f)
    return v


def write_path(v, path: tuple, new):
    if not path:
        return new
    if not isinstance(v, Record):
        raise KeyError(path[0])
    return v.replace(path[0], write_path(v.get(path[0]), path[1:], new))


# --------------------------------------------------------------------------- state


@dataclass
class Frame:
    proc: str
    pc: int
    locals: list  # per index: None | int (location) | Ref


@dataclass
class State:
    callstack: list
    operands: list
    memory: dict
    globals: dict  # (record name, Address) -> location
    next_loc: int = 0

    def fresh(self, value) -> int:
        c = self.next_loc
        self.next_loc += 1
        self.memory[c] = value
        return c

    def copy(self) -> "State":
        return State(
            [Frame(f.proc, f.pc, list(f.locals)) for f in self.callstack],
            list(self.operands), dict(self.memory), dict(self.globals), self.next_loc,
        )

    @property
    def top(self) -> Frame:
        return self.callstack[-1]


class FaultKind(enum.Enum):
    DanglingAccess = "DanglingAccess"
    StackUnderflow = "StackUnderflow"
    TypeMismatch = "TypeMismatch"
    UnboundLocal = "UnboundLocal"
    MissingGlobal = "MissingGlobal"
    GlobalExists = "GlobalExists"
    FuelExhausted = "FuelExhausted"

    @property
    def is_abort(self) -> bool:
        """Global-memory aborts are legitimate transaction failures, not safety violations."""
        return self in (FaultKind.MissingGlobal, FaultKind.GlobalExists)


@dataclass(frozen=True)
class Running:
    state: State


@dataclass(frozen=True)
class Halted:
    values: tuple
    memory: dict = field(default_factory=dict)
    globals: dict = field(default_factory=dict)

    @property
    def leaked(self) -> set:
        """Memory locations not owned by the global map."""
        return set(self.memory) - set(self.globals.values())


@dataclass(frozen=True)
class Fault:
    kind: FaultKind
    proc: Optional[str] = None
    pc: Optional[int] = None
    message: str = ""

    def __str__(self) -> str:
        where = f" at {self.proc}@{self.pc}" if self.proc is not None else ""
        msg = f": {self.message}" if self.message else ""
        return f"Fault({self.kind.value}){where}{msg}"


Outcome = Union[Running, Halted, Fault]


class InitError(ValueError):
    pass


class _Fault(Exception):
    def __init__(self, kind: FaultKind, message: str = ""):
        self.kind = kind
        self.message = message


def init_state(prog: Program, entry: str, args) -> State:
    try:
        proc = prog.proc(entry)
    except KeyError:
        raise InitError(f"unknown entry procedure {entry}") from None
    args = list(args)
    if len(args) != len(proc.ins):
        raise InitError(f"{entry} expects {len(proc.ins)} arguments, got {len(args)}")
    s = State([], [], {}, {})
    slots = [None] * proc.locals_count
    for i, (a, t) in enumerate(zip(args, proc.ins)):
        if isinstance(a, Ref) or isinstance(t, RefType):
            raise InitError("reference input at transaction start")
        if not value_has_type(prog, a, t):
            raise InitError(f"argument {i} is not of type {t}")
        slots[i] = s.fresh(a)
    s.callstack.append(Frame(entry, 0, slots))
    return s


# --------------------------------------------------------------------------- step


def _pop(s: State):
    if not s.operands:
        raise _Fault(FaultKind.StackUnderflow, "operand stack is empty")
    return s.operands.pop()


def _pop_value(s: State):
    v = _pop(s)
    if isinstance(v, Ref):
        raise _Fault(FaultKind.TypeMismatch, "expected a value, found a reference")
    return v


def _pop_ref(s: State) -> Ref:
    v = _pop(s)
    if not isinstance(v, Ref):
        raise _Fault(FaultKind.TypeMismatch, "expected a reference")
    return v


def _pop_prim(s: State, t: PrimType):
    v = _pop_value(s)
    if isinstance(v, Record) or value_type(v) != t:
        raise _Fault(FaultKind.TypeMismatch, f"expected {t}")
    return v


def _deref(s: State, r: Ref):
    if r.loc not in s.memory:
        raise _Fault(FaultKind.DanglingAccess, f"{r} points to freed memory")
    try:
        return read_path(s.memory[r.loc], r.path)
    except KeyError:
        raise _Fault(FaultKind.DanglingAccess, f"{r} names a missing field") from None


def _local(frame: Frame, x: int):
    if not 0 <= x < len(frame.locals) or frame.locals[x] is None:
        raise _Fault(FaultKind.UnboundLocal, f"local {x} is unbound")
    return frame.locals[x]


def _load(s: State, c: int):
    if c not in s.memory:
        raise _Fault(FaultKind.DanglingAccess, f"location c{c} was freed")
    return s.memory[c]


def _release(s: State, binding):
    if isinstance(binding, int) and not isinstance(binding, bool):
        s.memory.pop(binding, None)


def _exec(prog: Program, s: State, instr) -> Optional[tuple]:
    """Execute one instruction on the top frame. Returns the halt values if the program finished."""
    frame = s.top
    pc = frame.pc
    cls = type(instr)

    if cls is MoveLoc:
        b = _local(frame, instr.local)
        if isinstance(b, Ref):
            s.operands.append(b)
        else:
            s.operands.append(_load(s, b))
            del s.memory[b]
        frame.locals[instr.local] = None
    elif cls is CopyLoc:
        b = _local(frame, instr.local)
        s.operands.append(b if isinstance(b, Ref) else _load(s, b))
    elif cls is StoreLoc:
        v = _pop(s)
        if not 0 <= instr.local < len(frame.locals):
            raise _Fault(FaultKind.UnboundLocal, f"local {instr.local} does not exist")
        old = frame.locals[instr.local]
        _release(s, old)
        frame.locals[instr.local] = v if isinstance(v, Ref) else s.fresh(v)
    elif cls is BorrowLoc:
        b = _local(frame, instr.local)
        if isinstance(b, Ref):
            raise _Fault(FaultKind.TypeMismatch, "BorrowLoc of a reference local")
        _load(s, b)
        s.operands.append(Ref(b, ()))
    elif cls is BorrowField:
        b = _local(frame, instr.local)
        if not isinstance(b, Ref):
            raise _Fault(FaultKind.TypeMismatch, "BorrowField of a value local")
        target = _deref(s, b)
        if not isinstance(target, Record) or instr.field not in dict(target.fields):
            raise _Fault(FaultKind.TypeMismatch, f"no field {instr.field}")
        s.operands.append(Ref(b.loc, b.path + (instr.field,)))
    elif cls is ReadRef:
        s.operands.append(_deref(s, _pop_ref(s)))
    elif cls is WriteRef:
        r = _pop_ref(s)
        v = _pop_value(s)
        old = _deref(s, r)
        if value_type(old) != value_type(v):
            raise _Fault(FaultKind.TypeMismatch, "WriteRef of a value of the wrong type")
        s.memory[r.loc] = write_path(s.memory[r.loc], r.path, v)
    elif cls is FreezeRef:
        if not s.operands or not isinstance(s.operands[-1], Ref):
            raise _Fault(FaultKind.TypeMismatch, "FreezeRef needs a reference")
    elif cls is Pop:
        _pop(s)
    elif cls is Pack:
        decl = prog.record(instr.record)
        n = len(decl.fields)
        if len(s.operands) < n:
            raise _Fault(FaultKind.StackUnderflow, f"Pack {decl.name} needs {n} values")
        vals = s.operands[len(s.operands) - n:]
        del s.operands[len(s.operands) - n:]
        for (fname, ft), v in zip(decl.fields, vals):
            if isinstance(v, Ref) or not value_has_type(prog, v, ft):
                raise _Fault(FaultKind.TypeMismatch, f"field {fname} expects {ft}")
        s.operands.append(Record(decl.name, tuple((fn, v) for (fn, _), v in zip(decl.fields, vals))))
    elif cls is Unpack:
        v = _pop_value(s)
        if not isinstance(v, Record) or v.name != instr.record:
            raise _Fault(FaultKind.TypeMismatch, f"expected a {instr.record} record")
        s.operands.extend(fv for _, fv in v.fields)
    elif cls is Op:
        fn = ir.op_function(instr)
        if fn is None:
            raise _Fault(FaultKind.TypeMismatch, f"unknown operation {instr.opcode}")
        args = [_pop_prim(s, t) for t in reversed(instr.args)][::-1]
        s.operands.append(fn(*args))
    elif cls is LdConst:
        s.operands.append(instr.value)
    elif cls is Branch:
        b = _pop_prim(s, BOOL)
        frame.pc = instr.if_true if b else instr.if_false
        return None
    elif cls is Call:
        callee = prog.proc(instr.proc)
        n = len(callee.ins)
        if len(s.operands) < n:
            raise _Fault(FaultKind.StackUnderflow, f"call to {callee.qualname} needs {n} arguments")
        args = s.operands[len(s.operands) - n:]
        del s.operands[len(s.operands) - n:]
        slots = [None] * callee.locals_count
        for i, (a, t) in enumerate(zip(args, callee.ins)):
            if isinstance(t, RefType):
                if not isinstance(a, Ref):
                    raise _Fault(FaultKind.TypeMismatch, f"argument {i} should be a reference")
                slots[i] = a
            else:
                if isinstance(a, Ref) or not value_has_type(prog, a, t):
                    raise _Fault(FaultKind.TypeMismatch, f"argument {i} should be {t}")
                slots[i] = s.fresh(a)
        s.callstack.append(Frame(callee.qualname, 0, slots))
        return None
    elif cls is Ret:
        done = s.callstack.pop()
        for b in done.locals:
            _release(s, b)
        if not s.callstack:
            outs = tuple(s.operands)
            s.operands.clear()
            return outs
        s.top.pc += 1
        return None
    elif cls is MoveTo:
        v = _pop_value(s)
        a = _pop_prim(s, ADDR)
        if not isinstance(v, Record) or v.name != instr.record:
            raise _Fault(FaultKind.TypeMismatch, f"expected a {instr.record} record")
        if (instr.record, a) in s.globals:
            raise _Fault(FaultKind.GlobalExists, f"{instr.record} already published at {a}")
        s.globals[(instr.record, a)] = s.fresh(v)
    elif cls is MoveFrom:
        a = _pop_prim(s, ADDR)
        c = s.globals.pop((instr.record, a), None)
        if c is None:
            raise _Fault(FaultKind.MissingGlobal, f"no {instr.record} at {a}")
        s.operands.append(s.memory.pop(c))
    elif cls is BorrowGlobal:
        a = _pop_prim(s, ADDR)
        c = s.globals.get((instr.record, a))
        if c is None:
            raise _Fault(FaultKind.MissingGlobal, f"no {instr.record} at {a}")
        s.operands.append(Ref(c, ()))
    else:  # pragma: no cover
        raise _Fault(FaultKind.TypeMismatch, f"unknown instruction {instr!r}")
    frame.pc = pc + 1
    return None


def current_instr(prog: Program, s: State):
    f = s.top
    return prog.proc(f.proc).code[f.pc]


def step(prog: Program, s: State) -> Outcome:
    """Execute one instruction, mutating ``s`` in place."""
    frame = s.top
    code = prog.proc(frame.proc).code
    if not 0 <= frame.pc < len(code):
        return Fault(FaultKind.TypeMismatch, frame.proc, frame.pc, "pc out of range")
    proc, pc = frame.proc, frame.pc
    try:
        outs = _exec(prog, s, code[pc])
    except _Fault as e:
        return Fault(e.kind, proc, pc, e.message)
    if not s.callstack:
        return Halted(outs, dict(s.memory), dict(s.globals))
    return Running(s)


def trace_line(prog: Program, s: State) -> str:
    f = s.top
    return f"pc={f.pc} proc={f.proc} instr={ir.mnemonic(current_instr(prog, s))} stack={len(s.operands)}"


def run(prog: Program, entry: str, args, fuel: int = 10000, trace=None) -> Outcome:
    """Run ``entry`` on ``args`` for at most ``fuel`` steps.

    ``trace``, if given, is called with one formatted line before each step.
    """
    s = init_state(prog, entry, args)
    for _ in range(fuel):
        if trace is not None:
            trace(trace_line(prog, s))
        out = step(prog, s)
        if not isinstance(out, Running):
            return out
    f = s.top
    return Fault(FaultKind.FuelExhausted, f.proc, f.pc, f"no result after {fuel} steps")


def parse_value(text: str):
    """Parse a primitive literal such as ``true`` or ``0x1``."""
    text = text.strip()
    if text in ("true", "false"):
        return text == "true"
    if text.lower().startswith("0x"):
        return Address(int(text, 16))
    return int(text)

"""Bytecode IR: types, paths, instructions, programs, and the textual assembly format.

The assembly is line oriented::

    module m
    record Coin { f: int, owner: addr }
    proc p(Coin, &mut Coin) -> (&int) locals 3 acquires Coin {
      0: BorrowField f 1
      1: FreezeRef
      2: Ret
    }

Procedures and records are addressed program-wide; record names must be unique
across the whole program, procedure names only within their module (calls are
printed fully qualified as ``Call m::p``).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union


# --------------------------------------------------------------------------- types


class PrimType(enum.Enum):
    BOOL = "bool"
    INT = "int"
    ADDR = "addr"

    __hash__ = object.__hash__  # members are singletons; skips Enum's Python-level hash

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class RecordType:
    name: str

    def __str__(self) -> str:
        return self.name


ValType = Union[PrimType, RecordType]


@dataclass(frozen=True)
class RefType:
    target: ValType
    mutable: bool

    def __str__(self) -> str:
        return f"&mut {self.target}" if self.mutable else f"&{self.target}"


Type = Union[PrimType, RecordType, RefType]

BOOL, INT, ADDR = PrimType.BOOL, PrimType.INT, PrimType.ADDR


def is_ref(t: Type) -> bool:
    return isinstance(t, RefType)


def is_mut_ref(t: Type) -> bool:
    return isinstance(t, RefType) and t.mutable


def is_imm_ref(t: Type) -> bool:
    return isinstance(t, RefType) and not t.mutable


def mut_ref(t: ValType) -> RefType:
    return RefType(t, True)


def imm_ref(t: ValType) -> RefType:
    return RefType(t, False)


# --------------------------------------------------------------------------- values


@dataclass(frozen=True)
class Address:
    """A 16-byte account address."""

    value: int

    def __post_init__(self):
        if not 0 <= self.value < 1 << 128:
            raise ValueError(f"address out of range: {self.value:#x}")

    def __str__(self) -> str:
        return f"0x{self.value:032x}"


Const = Union[bool, int, Address]


def const_type(v: Const) -> PrimType:
    if isinstance(v, bool):
        return BOOL
    if isinstance(v, int):
        return INT
    if isinstance(v, Address):
        return ADDR
    raise TypeError(f"not a primitive constant: {v!r}")


def format_const(v: Const) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


# --------------------------------------------------------------------------- paths


class Path(NamedTuple):
    """A sequence of field selections, optionally ending in ``*`` (extensible)."""

    fields: tuple = ()
    ext: bool = False

    @property
    def fixed(self) -> bool:
        return not self.ext

    def concat(self, other: "Path") -> "Path":
        if self.ext:
            return self
        return Path(self.fields + other.fields, other.ext)

    def prefix_of(self, other: "Path") -> bool:
        """``self <= other`` on fixed paths."""
        if self.ext or other.ext:
            raise ValueError("prefix order is only defined on fixed paths")
        return other.fields[: len(self.fields)] == self.fields

    def matches(self, concrete: tuple) -> bool:
        """A fixed path matches only itself; ``r*`` matches every extension of ``r``."""
        if self.ext:
            return concrete[: len(self.fields)] == self.fields
        return concrete == self.fields

    def __str__(self) -> str:
        body = ".".join(self.fields)
        return body + "*" if self.ext else body


EPS = Path()
STAR = Path((), True)


def path(*fields: str, ext: bool = False) -> Path:
    return Path(tuple(fields), ext)


def path_concat(p: Path, q: Path) -> Path:
    return p.concat(q)


def path_prefix(p: Path, q: Path) -> bool:
    return p.prefix_of(q)


# --------------------------------------------------------------------------- instructions


@dataclass(frozen=True)
class MoveLoc:
    local: int


@dataclass(frozen=True)
class CopyLoc:
    local: int


@dataclass(frozen=True)
class StoreLoc:
    local: int


@dataclass(frozen=True)
class BorrowLoc:
    local: int


@dataclass(frozen=True)
class BorrowField:
    field: str
    local: int


@dataclass(frozen=True)
class ReadRef:
    pass


@dataclass(frozen=True)
class WriteRef:
    pass


@dataclass(frozen=True)
class FreezeRef:
    pass


@dataclass(frozen=True)
class Pop:
    pass


@dataclass(frozen=True)
class Pack:
    record: str


@dataclass(frozen=True)
class Unpack:
    record: str


@dataclass(frozen=True)
class Op:
    opcode: str
    args: tuple  # of PrimType
    result: PrimType

    @property
    def arity(self) -> int:
        return len(self.args)


@dataclass(frozen=True)
class LdConst:
    value: Const


@dataclass(frozen=True)
class Call:
    proc: str  # qualified "module::name"


@dataclass(frozen=True)
class Ret:
    pass


@dataclass(frozen=True)
class Branch:
    if_true: int
    if_false: int


@dataclass(frozen=True)
class MoveTo:
    record: str


@dataclass(frozen=True)
class MoveFrom:
    record: str


@dataclass(frozen=True)
class BorrowGlobal:
    record: str


Instr = Union[
    MoveLoc, CopyLoc, StoreLoc, BorrowLoc, BorrowField, ReadRef, WriteRef, FreezeRef,
    Pop, Pack, Unpack, Op, LdConst, Call, Ret, Branch, MoveTo, MoveFrom, BorrowGlobal,
]

INSTR_CLASSES = {
    cls.__name__: cls
    for cls in (
        MoveLoc, CopyLoc, StoreLoc, BorrowLoc, BorrowField, ReadRef, WriteRef, FreezeRef,
        Pop, Pack, Unpack, Op, LdConst, Call, Ret, Branch, MoveTo, MoveFrom, BorrowGlobal,
    )
}

LOCAL_INSTRS = (MoveLoc, CopyLoc, StoreLoc, BorrowLoc, BorrowField)
GLOBAL_INSTRS = (MoveTo, MoveFrom, BorrowGlobal)


def mnemonic(instr: Instr) -> str:
    return type(instr).__name__


# Pure operations: name -> list of (arg types, result type, function).
def _sig(args, result, fn):
    return (tuple(args), result, fn)


OPCODES: dict = {
    "add": [_sig((INT, INT), INT, lambda a, b: a + b)],
    "sub": [_sig((INT, INT), INT, lambda a, b: a - b)],
    "mul": [_sig((INT, INT), INT, lambda a, b: a * b)],
    "lt": [_sig((INT, INT), BOOL, lambda a, b: a < b)],
    "le": [_sig((INT, INT), BOOL, lambda a, b: a <= b)],
    "gt": [_sig((INT, INT), BOOL, lambda a, b: a > b)],
    "and": [_sig((BOOL, BOOL), BOOL, lambda a, b: a and b)],
    "or": [_sig((BOOL, BOOL), BOOL, lambda a, b: a or b)],
    "not": [_sig((BOOL,), BOOL, lambda a: not a)],
    "eq": [_sig((t, t), BOOL, lambda a, b: a == b) for t in (BOOL, INT, ADDR)],
    "neq": [_sig((t, t), BOOL, lambda a, b: a != b) for t in (BOOL, INT, ADDR)],
}


def op_function(op: Op):
    """The concrete function for ``op``, or None if the signature is not a known variant."""
    for args, result, fn in OPCODES.get(op.opcode, ()):
        if args == tuple(op.args) and result == op.result:
            return fn
    return None


def make_op(opcode: str, *args: PrimType) -> Op:
    """Build an Op by looking up the unique variant of ``opcode`` taking ``args``."""
    for sig_args, result, _ in OPCODES[opcode]:
        if sig_args == tuple(args):
            return Op(opcode, sig_args, result)
    raise KeyError(f"no variant of {opcode} for {args}")


# --------------------------------------------------------------------------- program


@dataclass(frozen=True)
class RecordDecl:
    name: str
    module: str
    fields: tuple  # of (name, ValType)

    def field_type(self, f: str) -> Optional[ValType]:
        for name, t in self.fields:
            if name == f:
                return t
        return None

    @property
    def field_names(self) -> tuple:
        return tuple(name for name, _ in self.fields)


@dataclass(frozen=True)
class Procedure:
    name: str
    module: str
    ins: tuple
    outs: tuple
    locals_count: int
    acquires: tuple
    code: tuple

    @property
    def qualname(self) -> str:
        return f"{self.module}::{self.name}"

    def is_input(self, local: int) -> bool:
        return local < len(self.ins)


@dataclass(frozen=True)
class Module:
    name: str
    records: tuple = ()
    procs: tuple = ()


@dataclass(frozen=True)
class Program:
    modules: tuple = ()
    _records: dict = field(default=None, compare=False, repr=False, hash=False)
    _procs: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        records = {r.name: r for m in self.modules for r in m.records}
        procs = {p.qualname: p for m in self.modules for p in m.procs}
        object.__setattr__(self, "_records", records)
        object.__setattr__(self, "_procs", procs)

    @property
    def records(self) -> dict:
        return self._records

    @property
    def procs(self) -> dict:
        return self._procs

    def record(self, name: str) -> RecordDecl:
        return self._records[name]

    def proc(self, qualname: str) -> Procedure:
        return self._procs[qualname]

    def __getstate__(self):
        return {"modules": self.modules}

    def __setstate__(self, state):
        object.__setattr__(self, "modules", state["modules"])
        self.__post_init__()


# --------------------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class Diagnostic:
    message: str
    proc: Optional[str] = None
    offset: Optional[int] = None
    line: Optional[int] = None
    col: Optional[int] = None

    def __str__(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"{self.line}:{self.col or 1}")
        if self.proc is not None:
            where.append(self.proc if self.offset is None else f"{self.proc}@{self.offset}")
        return (": ".join(where) + ": " if where else "") + self.message


class AsmError(Exception):
    """Raised by :func:`parse_program` with one or more diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


# --------------------------------------------------------------------------- parser

_TOKEN = re.compile(r"\s*(?:(&mut\b)|(->)|(::)|([A-Za-z_][A-Za-z0-9_]*)|(0x[0-9a-fA-F]+)|(-?[0-9]+)|(.))")
_PRIMS = {"bool": BOOL, "int": INT, "addr": ADDR}
_KEYWORDS = {"module", "record", "proc", "locals", "acquires"}


class _Tok(NamedTuple):
    kind: str
    text: str
    col: int


def _lex(line: str, lineno: int):
    toks = []
    pos = 0
    text = line.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        col = m.start(m.lastindex) + 1
        kinds = ("mutref", "arrow", "colons", "ident", "hex", "int", "punct")
        kind = kinds[m.lastindex - 1]
        tok = m.group(m.lastindex)
        if kind == "punct" and tok not in "{}(),:&":
            raise AsmError([Diagnostic(f"unexpected character {tok!r}", line=lineno, col=col)])
        toks.append(_Tok(kind, tok, col))
        pos = m.end()
    return toks


class _Cursor:
    def __init__(self, toks, lineno):
        self.toks = toks
        self.i = 0
        self.lineno = lineno

    def error(self, msg):
        col = self.toks[self.i].col if self.i < len(self.toks) else (self.toks[-1].col + 1 if self.toks else 1)
        return AsmError([Diagnostic(msg, line=self.lineno, col=col)])

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self, what="token"):
        tok = self.peek()
        if tok is None:
            raise self.error(f"expected {what}")
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.next(repr(text))
        if tok.text != text:
            self.i -= 1
            raise self.error(f"expected {text!r}, got {tok.text!r}")
        return tok

    def accept(self, text):
        tok = self.peek()
        if tok is not None and tok.text == text:
            self.i += 1
            return True
        return False

    def ident(self, what="identifier"):
        tok = self.next(what)
        if tok.kind != "ident":
            self.i -= 1
            raise self.error(f"expected {what}, got {tok.text!r}")
        return tok.text

    def integer(self, what="integer"):
        tok = self.next(what)
        if tok.kind != "int":
            self.i -= 1
            raise self.error(f"expected {what}, got {tok.text!r}")
        return int(tok.text)

    def done(self):
        if self.i < len(self.toks):
            raise self.error(f"unexpected trailing {self.toks[self.i].text!r}")


def _parse_valtype(cur: _Cursor):
    name = cur.ident("type")
    return _PRIMS.get(name, RecordType(name))


def _parse_type(cur: _Cursor):
    if cur.accept("&mut"):
        return RefType(_parse_valtype(cur), True)
    if cur.accept("&"):
        return RefType(_parse_valtype(cur), False)
    return _parse_valtype(cur)


def _parse_type_list(cur: _Cursor):
    cur.expect("(")
    types = []
    if not cur.accept(")"):
        while True:
            types.append(_parse_type(cur))
            if cur.accept(")"):
                break
            cur.expect(",")
    return tuple(types)


def _parse_const(cur: _Cursor):
    tok = cur.next("constant")
    if tok.kind == "hex":
        digits = tok.text[2:]
        if len(digits) > 32:
            cur.i -= 1
            raise cur.error("address literal longer than 16 bytes")
        return Address(int(digits, 16))
    if tok.kind == "int":
        return int(tok.text)
    if tok.text in ("true", "false"):
        return tok.text == "true"
    cur.i -= 1
    raise cur.error(f"bad constant {tok.text!r}")


def _parse_instr(cur: _Cursor, module: str):
    name = cur.ident("instruction mnemonic")
    cls = INSTR_CLASSES.get(name)
    if cls is None:
        cur.i -= 1
        raise cur.error(f"unknown instruction {name!r}")
    if cls in (MoveLoc, CopyLoc, StoreLoc, BorrowLoc):
        return cls(cur.integer("local index"))
    if cls is BorrowField:
        f = cur.ident("field name")
        return BorrowField(f, cur.integer("local index"))
    if cls in (Pack, Unpack, MoveTo, MoveFrom, BorrowGlobal):
        return cls(cur.ident("record name"))
    if cls is Op:
        opcode = cur.ident("opcode")
        args = []
        while not cur.accept("->"):
            t = _parse_valtype(cur)
            if not isinstance(t, PrimType):
                raise cur.error("Op operands must be primitive")
            args.append(t)
        result = _parse_valtype(cur)
        if not isinstance(result, PrimType):
            raise cur.error("Op result must be primitive")
        return Op(opcode, tuple(args), result)
    if cls is LdConst:
        return LdConst(_parse_const(cur))
    if cls is Call:
        first = cur.ident("procedure name")
        if cur.accept("::"):
            return Call(f"{first}::{cur.ident('procedure name')}")
        return Call(f"{module}::{first}")
    if cls is Branch:
        return Branch(cur.integer("branch target"), cur.integer("branch target"))
    return cls()


def parse_program(text: str, validate: bool = True) -> Program:
    """Parse assembly text into a Program.

    Raises AsmError carrying line/column diagnostics on lexical or syntax errors,
    and (when ``validate``) the diagnostics of :func:`validate_structure`.
    """
    modules = []  # list of [name, records, procs]
    seen_modules = set()
    diags = []
    proc_lines = {}
    lines = text.splitlines()
    i = 0
    in_proc = None  # (header dict, code list)
    while i < len(lines):
        lineno = i + 1
        raw = lines[i].split("#", 1)[0]
        i += 1
        try:
            toks = _lex(raw, lineno)
        except AsmError as e:
            diags.extend(e.diagnostics)
            continue
        if not toks:
            continue
        cur = _Cursor(toks, lineno)
        try:
            if in_proc is not None:
                header, code = in_proc
                if cur.accept("}"):
                    cur.done()
                    modules[-1][2].append(Procedure(code=tuple(code), **header))
                    in_proc = None
                    continue
                off = cur.integer("offset")
                if off != len(code):
                    raise AsmError([Diagnostic(f"offset {off} out of sequence (expected {len(code)})",
                                               line=lineno, col=toks[0].col)])
                cur.expect(":")
                code.append(_parse_instr(cur, header["module"]))
                cur.done()
                continue
            kw = cur.ident("declaration")
            if kw == "module":
                name = cur.ident("module name")
                cur.done()
                if name in seen_modules:
                    diags.append(Diagnostic(f"duplicate module {name}", line=lineno, col=toks[1].col))
                seen_modules.add(name)
                modules.append([name, [], []])
            elif not modules:
                raise cur.error("declaration outside of a module")
            elif kw == "record":
                name = cur.ident("record name")
                cur.expect("{")
                fields = []
                if not cur.accept("}"):
                    while True:
                        fname = cur.ident("field name")
                        cur.expect(":")
                        fields.append((fname, _parse_valtype(cur)))
                        if cur.accept("}"):
                            break
                        cur.expect(",")
                cur.done()
                modules[-1][1].append(RecordDecl(name, modules[-1][0], tuple(fields)))
            elif kw == "proc":
                name = cur.ident("procedure name")
                ins = _parse_type_list(cur)
                cur.expect("->")
                outs = _parse_type_list(cur)
                if cur.ident("'locals'") != "locals":
                    cur.i -= 1
                    raise cur.error("expected 'locals'")
                nlocals = cur.integer("locals count")
                acquires = []
                if cur.accept("acquires"):
                    while True:
                        acquires.append(cur.ident("record name"))
                        if not cur.accept(","):
                            break
                cur.expect("{")
                cur.done()
                header = dict(name=name, module=modules[-1][0], ins=ins, outs=outs,
                              locals_count=nlocals, acquires=tuple(acquires))
                proc_lines[f"{modules[-1][0]}::{name}"] = lineno
                in_proc = (header, [])
            else:
                cur.i -= 1
                raise cur.error(f"unknown declaration {kw!r}")
        except AsmError as e:
            diags.extend(e.diagnostics)
    if in_proc is not None:
        diags.append(Diagnostic("unterminated procedure body", line=len(lines)))
    if diags:
        raise AsmError(diags)
    prog = Program(tuple(Module(n, tuple(r), tuple(p)) for n, r, p in modules))
    if validate:
        problems = validate_structure(prog)
        if problems:
            raise AsmError(
                Diagnostic(d.message, d.proc, d.offset, line=proc_lines.get(d.proc)) for d in problems
            )
    return prog


# --------------------------------------------------------------------------- printer


def format_type_list(types) -> str:
    return "(" + ", ".join(str(t) for t in types) + ")"


def format_instr(instr: Instr) -> str:
    name = mnemonic(instr)
    if isinstance(instr, (MoveLoc, CopyLoc, StoreLoc, BorrowLoc)):
        return f"{name} {instr.local}"
    if isinstance(instr, BorrowField):
        return f"{name} {instr.field} {instr.local}"
    if isinstance(instr, (Pack, Unpack, MoveTo, MoveFrom, BorrowGlobal)):
        return f"{name} {instr.record}"
    if isinstance(instr, Op):
        args = "".join(f" {t}" for t in instr.args)
        return f"{name} {instr.opcode}{args} -> {instr.result}"
    if isinstance(instr, LdConst):
        return f"{name} {format_const(instr.value)}"
    if isinstance(instr, Call):
        return f"{name} {instr.proc}"
    if isinstance(instr, Branch):
        return f"{name} {instr.if_true} {instr.if_false}"
    return name


def format_proc(p: Procedure) -> str:
    head = f"proc {p.name}{format_type_list(p.ins)} -> {format_type_list(p.outs)} locals {p.locals_count}"
    if p.acquires:
        head += " acquires " + ", ".join(p.acquires)
    body = [f"  {i}: {format_instr(ins)}" for i, ins in enumerate(p.code)]
    return "\n".join([head + " {", *body, "}"])


def format_program(p: Program) -> str:
    out = []
    for m in p.modules:
        out.append(f"module {m.name}")
        for r in m.records:
            fields = ", ".join(f"{n}: {t}" for n, t in r.fields)
            out.append(f"record {r.name} {{ {fields} }}" if fields else f"record {r.name} {{ }}")
        for proc in m.procs:
            out.append(format_proc(proc))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- validation


def _valtype_ok(prog: Program, t) -> bool:
    return isinstance(t, PrimType) or (isinstance(t, RecordType) and t.name in prog.records)


def _type_ok(prog: Program, t) -> bool:
    if isinstance(t, RefType):
        return _valtype_ok(prog, t.target)
    return _valtype_ok(prog, t)


def _record_cycles(prog: Program):
    graph = {
        r.name: [t.name for _, t in r.fields if isinstance(t, RecordType) and t.name in prog.records]
        for r in prog.records.values()
    }
    state = {}
    cyclic = []

    def visit(n):
        state[n] = 1
        for m in graph[n]:
            if state.get(m) == 1:
                cyclic.append(n)
            elif m not in state:
                visit(m)
        state[n] = 2

    for n in sorted(graph):
        if n not in state:
            visit(n)
    return cyclic


def module_dependencies(prog: Program) -> dict:
    deps = {m.name: set() for m in prog.modules}
    for proc in prog.procs.values():
        for ins in proc.code:
            if isinstance(ins, Call) and ins.proc in prog.procs:
                callee = prog.proc(ins.proc).module
                if callee != proc.module:
                    deps[proc.module].add(callee)
    return deps


def _has_module_cycle(deps: dict) -> bool:
    state = {}

    def visit(n):
        state[n] = 1
        for m in sorted(deps[n]):
            if state.get(m) == 1 or (m not in state and visit(m)):
                return True
        state[n] = 2
        return False

    return any(n not in state and visit(n) for n in sorted(deps))


def validate_structure(prog: Program) -> list:
    """Check every structural invariant; returns a list of Diagnostic (empty if valid)."""
    diags = []
    record_owner = {}
    for m in prog.modules:
        proc_names = set()
        for r in m.records:
            if r.name in record_owner:
                diags.append(Diagnostic(f"duplicate record {r.name}"))
            record_owner[r.name] = m.name
            names = [n for n, _ in r.fields]
            if len(set(names)) != len(names):
                diags.append(Diagnostic(f"duplicate field in record {r.name}"))
        for p in m.procs:
            if p.name in proc_names:
                diags.append(Diagnostic(f"duplicate procedure {p.qualname}", proc=p.qualname))
            proc_names.add(p.name)
    for r in prog.records.values():
        for fname, t in r.fields:
            if not _valtype_ok(prog, t):
                diags.append(Diagnostic(f"unresolved type {t} in field {r.name}.{fname}"))
    for name in _record_cycles(prog):
        diags.append(Diagnostic(f"record {name} is recursive"))

    for p in prog.procs.values():
        q = p.qualname
        for t in p.ins + p.outs:
            if not _type_ok(prog, t):
                diags.append(Diagnostic(f"unresolved type {t}", proc=q))
        if p.locals_count < len(p.ins):
            diags.append(Diagnostic("fewer locals than parameters", proc=q))
        for t in p.acquires:
            if record_owner.get(t) != p.module:
                diags.append(Diagnostic(f"acquires {t} not declared in module {p.module}", proc=q))
        if not p.code:
            diags.append(Diagnostic("empty bytecode", proc=q))
            continue
        if not isinstance(p.code[-1], (Ret, Branch)):
            diags.append(Diagnostic("terminator required", proc=q, offset=len(p.code) - 1))
        for off, ins in enumerate(p.code):
            if isinstance(ins, LOCAL_INSTRS) and not 0 <= ins.local < p.locals_count:
                diags.append(Diagnostic(f"local {ins.local} out of range", proc=q, offset=off))
            elif isinstance(ins, Branch):
                for target in (ins.if_true, ins.if_false):
                    if not 0 <= target < len(p.code):
                        diags.append(Diagnostic(f"illegal branch target {target}", proc=q, offset=off))
            elif isinstance(ins, (Pack, Unpack) + GLOBAL_INSTRS):
                owner = record_owner.get(ins.record)
                if owner is None:
                    diags.append(Diagnostic(f"unresolved record {ins.record}", proc=q, offset=off))
                elif isinstance(ins, GLOBAL_INSTRS) and owner != p.module:
                    diags.append(Diagnostic(f"global op outside declaring module ({ins.record})",
                                            proc=q, offset=off))
            elif isinstance(ins, BorrowField):
                if not any(r.field_type(ins.field) is not None for r in prog.records.values()):
                    diags.append(Diagnostic(f"unknown field {ins.field}", proc=q, offset=off))
            elif isinstance(ins, Call):
                if ins.proc not in prog.procs:
                    diags.append(Diagnostic(f"unresolved procedure {ins.proc}", proc=q, offset=off))
            elif isinstance(ins, Op):
                if op_function(ins) is None:
                    diags.append(Diagnostic(f"unknown operation {format_instr(ins)}", proc=q, offset=off))
            elif isinstance(ins, LdConst):
                try:
                    const_type(ins.value)
                except TypeError:
                    diags.append(Diagnostic(f"bad constant {ins.value!r}", proc=q, offset=off))
    if _has_module_cycle(module_dependencies(prog)):
        diags.append(Diagnostic("cyclic module dependency"))
    return diags

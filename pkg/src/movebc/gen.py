"""Typed random program generator for fuzzing the verifier and the interpreter.

Programs are built from structured statements over a simulated set of bound
locals, so every output is structurally valid and stack-height correct. Nothing
tries to respect the borrow discipline: a good share of programs are rejected.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .interp import Record
from .ir import (
    ADDR, BOOL, INT, Address, BorrowField, BorrowGlobal, BorrowLoc, Branch, Call, CopyLoc,
    FreezeRef, LdConst, Module, MoveFrom, MoveLoc, MoveTo, Pack, Pop, PrimType, Procedure,
    Program, ReadRef, RecordDecl, RecordType, RefType, Ret, StoreLoc, Unpack, WriteRef,
    imm_ref, is_mut_ref, is_ref, make_op, mut_ref,
)

FIELD_NAMES = ("f", "g", "h")
ADDRESSES = (Address(1), Address(2))  # published by the per-module init procedures
ADDRESS_POOL = ADDRESSES + (Address(3),)
PRIMS = (INT, BOOL, ADDR)


@dataclass(frozen=True)
class FuzzCase:
    seed: int
    program: Program
    entry: str
    args: tuple


@dataclass
class GenConfig:
    max_modules: int = 3
    max_procs: int = 8
    max_records: int = 4
    max_call_depth: int = 5
    max_cost: int = 1500
    loop_iterations: int = 2
    drop_refs_before_ret: float = 0.95
    drop_acquires: float = 0.03
    stable_arms: float = 0.9


class _Proc:
    """Mutable state while generating one procedure body."""

    def __init__(self, name, module, ins, outs, ltypes, entry=False):
        self.entry = entry
        self.name = name
        self.module = module
        self.ins = ins
        self.outs = outs
        self.ltypes = ltypes
        self.bound = [i < len(ins) for i in range(len(ltypes))]
        self.reserved = set()
        self.code = []  # instructions and ("label", k) / ("branch", k1, k2) placeholders
        self.labels = 0
        self.acquires = set()
        self.cost = 0
        self.mult = 1
        self.stable = False  # inside a branch arm or loop body: keep the set of bound locals fixed

    def restore(self, bound):
        self.bound = list(bound) + [False] * (len(self.ltypes) - len(bound))

    def merge(self, a, b):
        a = list(a) + [False] * (len(self.ltypes) - len(a))
        b = list(b) + [False] * (len(self.ltypes) - len(b))
        self.bound = [x and y for x, y in zip(a, b)]

    def label(self) -> int:
        self.labels += 1
        return self.labels - 1


class _Gen:
    def __init__(self, seed: int, budget: int, cfg: GenConfig):
        self.rng = random.Random(seed)
        self.budget = max(1, budget)
        self.cfg = cfg
        self.records = []  # RecordDecl
        self.procs = []  # Procedure
        self.depth = {}
        self.cost = {}

    # ------------------------------------------------------------------ declarations
    def record_fields(self, name):
        for r in self.records:
            if r.name == name:
                return r.fields
        raise KeyError(name)

    def valtypes(self):
        return list(PRIMS) + [RecordType(r.name) for r in self.records]

    def random_valtype(self, records_weight=0.35):
        if self.records and self.rng.random() < records_weight:
            return RecordType(self.rng.choice(self.records).name)
        return self.rng.choice(PRIMS)

    def random_type(self, allow_refs=True):
        t = self.random_valtype()
        if allow_refs and self.rng.random() < 0.35:
            return RefType(t, self.rng.random() < 0.5)
        return t

    def build(self):
        rng = self.rng
        n_mod = rng.randint(1, self.cfg.max_modules)
        modules = [f"m{i}" for i in range(n_mod)]
        n_rec = rng.randint(1, self.cfg.max_records)
        rec_mods = sorted(rng.randrange(n_mod) for _ in range(n_rec))
        for i, mi in enumerate(rec_mods):
            fields = []
            for fname in FIELD_NAMES[: rng.randint(1, 3)]:
                if self.records and rng.random() < 0.3:
                    ft = RecordType(rng.choice(self.records).name)
                else:
                    ft = rng.choice(PRIMS)
                fields.append((fname, ft))
            self.records.append(RecordDecl(f"R{i}", modules[mi], tuple(fields)))
        self.publishers = []
        for m in modules:
            own = [r for r in self.records if r.module == m]
            if own:
                self.procs.append(self.publisher(m, own))
                self.publishers.append(self.procs[-1])
                self.depth[self.procs[-1].qualname] = 1
                self.cost[self.procs[-1].qualname] = len(self.procs[-1].code)
        hi = self.cfg.max_procs - len(self.publishers)
        n_proc = min(rng.randint(2, hi), rng.randint(2, hi))
        proc_mods = sorted(rng.randrange(n_mod) for _ in range(n_proc - 1)) + [n_mod - 1]
        for i, mi in enumerate(proc_mods):
            entry = i == n_proc - 1
            self.procs.append(self.gen_proc(f"p{i}", modules[mi], entry))
        mods = []
        for m in modules:
            mods.append(Module(m, tuple(r for r in self.records if r.module == m),
                               tuple(p for p in self.procs if p.module == m)))
        return Program(tuple(mods))

    # ------------------------------------------------------------------ procedures
    def constant_value_code(self, t):
        if isinstance(t, PrimType):
            return [self.const(t)]
        code = []
        for _, ft in self.record_fields(t.name):
            code.extend(self.constant_value_code(ft))
        return code + [Pack(t.name)]

    def publisher(self, module, records):
        """A procedure that publishes every record of ``module`` at every pool address."""
        code = []
        for r in records:
            for a in ADDRESSES:
                code += [LdConst(a)] + self.constant_value_code(RecordType(r.name)) + [MoveTo(r.name)]
        return Procedure("init", module, (), (), 0, (), tuple(code + [Ret()]))

    def gen_proc(self, name, module, entry):
        rng = self.rng
        if entry:
            ins = tuple(self.random_type(False) for _ in range(rng.randint(0, 2)))
            outs = tuple(self.random_type(False) for _ in range(rng.randint(0, 1)))
        else:
            ins = tuple(self.random_type() for _ in range(rng.randint(0, 3)))
            refs = [t for t in ins if is_ref(t)]
            outs = []
            for _ in range(rng.randint(0, 2)):
                if refs and rng.random() < 0.4:
                    r = rng.choice(refs)
                    outs.append(r if rng.random() < 0.5 else imm_ref(r.target))
                else:
                    outs.append(self.random_valtype())
            outs = tuple(outs)
        extra = [self.random_type() for _ in range(rng.randint(2, 5))]
        p = _Proc(name, module, ins, outs, list(ins) + extra, entry)
        if entry:
            self.emit(p, [Call(q.qualname) for q in self.publishers if rng.random() < 0.97])
        self.block(p, self.budget, nest=0)
        self.epilogue(p)
        acquires = set(p.acquires)
        if acquires and rng.random() < self.cfg.drop_acquires:
            acquires.discard(rng.choice(sorted(acquires)))
        code = self.resolve(p.code)
        proc = Procedure(name, module, ins, outs, len(p.ltypes), tuple(sorted(acquires)), tuple(code))
        self.depth[proc.qualname] = 1 + max(
            (self.depth[i.proc] for i in code if isinstance(i, Call)), default=0)
        self.cost[proc.qualname] = max(p.cost, 1)
        return proc

    @staticmethod
    def resolve(items):
        where, code = {}, []
        for it in items:
            if isinstance(it, tuple) and it[0] == "label":
                where[it[1]] = len(code)
            else:
                code.append(it)
        out = []
        for it in code:
            if isinstance(it, tuple) and it[0] == "branch":
                out.append(Branch(where[it[1]], where[it[2]]))
            else:
                out.append(it)
        return out

    def emit(self, p: _Proc, instrs):
        for i in instrs:
            p.code.append(i)
            if not isinstance(i, tuple):
                p.cost += p.mult
                if isinstance(i, Call):
                    p.cost += p.mult * self.cost[i.proc]
                if isinstance(i, (BorrowGlobal, MoveFrom)):
                    p.acquires.add(i.record)
                if isinstance(i, Call):
                    callee = self.find(i.proc)
                    if callee.module == p.module:
                        p.acquires.update(callee.acquires)

    def find(self, qualname):
        for proc in self.procs:
            if proc.qualname == qualname:
                return proc
        raise KeyError(qualname)

    def epilogue(self, p: _Proc):
        code = []
        saved = list(p.bound)
        for t in p.outs:
            e = self.expr(p, t, 2)
            if e is None:
                e = self.expr(p, t, 2)
            if e is None:
                # fall back to a structurally valid but likely ill-typed value
                p.restore(saved)
                e = [self.const(t if isinstance(t, PrimType) else INT)]
            code.extend(e)
        for i, t in enumerate(p.ltypes):
            if p.bound[i] and is_ref(t) and i >= len(p.ins) and self.rng.random() < self.cfg.drop_refs_before_ret:
                code.extend([MoveLoc(i), Pop()])
                p.bound[i] = False
        code.append(Ret())
        self.emit(p, code)

    # ------------------------------------------------------------------ statements
    def block(self, p: _Proc, n: int, nest: int):
        for _ in range(n):
            self.statement(p, nest)

    def arm(self, p: _Proc, nest: int):
        outer = p.stable
        p.stable = outer or self.rng.random() < self.cfg.stable_arms
        self.block(p, self.rng.randint(1, max(1, self.budget // 3)), nest + 1)
        p.stable = outer

    def statement(self, p: _Proc, nest: int):
        rng = self.rng
        kinds = ["assign"] * 8 + ["pop"] * 2 + ["write"] * 3 + ["call"] * 2 + ["unpack"]
        if any(r.module == p.module for r in self.records):
            kinds += ["move_to"] * (3 if p.entry else 1)
        if nest < 2:
            kinds += ["if"] * 2 + ["loop"]
        for _ in range(6):
            kind = rng.choice(kinds)
            saved = (list(p.bound), p.cost, set(p.acquires))
            code = getattr(self, "st_" + kind)(p, nest)
            if code is not None:
                return
            p.restore(saved[0])
            p.cost, p.acquires = saved[1], saved[2]

    def st_assign(self, p, nest):
        cands = [i for i in range(len(p.ltypes)) if i >= len(p.ins) and i not in p.reserved
                 and (p.bound[i] or not p.stable)]
        if not cands:
            return None
        x = self.rng.choice(cands)
        e = self.expr(p, p.ltypes[x], 3)
        if e is None:
            return None
        p.bound[x] = True
        self.emit(p, e + [StoreLoc(x)])
        return True

    def st_pop(self, p, nest):
        e = self.expr(p, self.random_type(), 3)
        if e is None:
            return None
        self.emit(p, e + [Pop()])
        return True

    def st_write(self, p, nest):
        refs = [p.ltypes[i].target for i in range(len(p.ltypes))
                if p.bound[i] and is_mut_ref(p.ltypes[i])]
        vals = [p.ltypes[i] for i in range(len(p.ltypes)) if p.bound[i] and not is_ref(p.ltypes[i])]
        pool = refs + vals
        if not pool:
            return None
        t = self.rng.choice(pool)
        v = self.expr(p, t, 2)
        if v is None:
            return None
        r = self.expr(p, mut_ref(t), 2)
        if r is None:
            return None
        self.emit(p, v + r + [WriteRef()])
        return True

    def st_call(self, p, nest):
        callee = self.pick_callee(p, lambda c: True)
        if callee is None:
            return None
        args = self.args_for(p, callee)
        if args is None:
            return None
        code = args + [Call(callee.qualname)]
        for t in reversed(callee.outs):
            slots = [i for i in range(len(p.ltypes)) if i >= len(p.ins) and p.ltypes[i] == t
                     and i not in p.reserved and (p.bound[i] or not p.stable)]
            if slots and self.rng.random() < 0.7:
                x = self.rng.choice(slots)
                p.bound[x] = True
                code.append(StoreLoc(x))
            else:
                code.append(Pop())
        self.emit(p, code)
        return True

    def st_unpack(self, p, nest):
        if not self.records:
            return None
        r = self.rng.choice(self.records)
        e = self.expr(p, RecordType(r.name), 2)
        if e is None:
            return None
        self.emit(p, e + [Unpack(r.name)] + [Pop()] * len(r.fields))
        return True

    def st_move_to(self, p, nest):
        own = [r for r in self.records if r.module == p.module]
        r = self.rng.choice(own)
        if self.rng.random() < 0.85:
            # take a published cell and put it back, occasionally at another address
            a = self.const(ADDR)
            b = self.const(ADDR) if self.rng.random() < 0.1 else a
            self.emit(p, [b, a, MoveFrom(r.name), MoveTo(r.name)])
            return True
        a = self.expr(p, ADDR, 1)
        v = self.expr(p, RecordType(r.name), 2) if a is not None else None
        if v is None:
            return None
        self.emit(p, a + v + [MoveTo(r.name)])
        return True

    def st_if(self, p, nest):
        c = self.expr(p, BOOL, 2)
        if c is None:
            return None
        lt, le, lend = p.label(), p.label(), p.label()
        self.emit(p, c + [("branch", lt, le), ("label", lt)])
        before = list(p.bound)
        self.arm(p, nest)
        self.emit(p, [LdConst(True), ("branch", lend, lend), ("label", le)])
        after_then = p.bound
        p.restore(before)
        if self.rng.random() < 0.7:
            self.arm(p, nest)
        self.emit(p, [("label", lend)])
        p.merge(after_then, p.bound)
        return True

    def st_loop(self, p, nest):
        counter = len(p.ltypes)
        p.ltypes.append(INT)
        p.bound.append(False)
        p.reserved.add(counter)
        n = self.rng.randint(1, self.cfg.loop_iterations)
        head, body, done = p.label(), p.label(), p.label()
        self.emit(p, [LdConst(0), StoreLoc(counter), ("label", head),
                      CopyLoc(counter), LdConst(n), make_op("lt", INT, INT),
                      ("branch", body, done), ("label", body)])
        p.bound[counter] = True
        before = list(p.bound)
        p.mult *= n
        self.arm(p, nest)
        p.mult //= n
        self.emit(p, [CopyLoc(counter), LdConst(1), make_op("add", INT, INT), StoreLoc(counter),
                      LdConst(True), ("branch", head, head), ("label", done),
                      MoveLoc(counter), Pop()])
        p.merge(before, p.bound)
        p.bound[counter] = False
        return True

    # ------------------------------------------------------------------ expressions
    def const(self, t: PrimType):
        if t is INT:
            return LdConst(self.rng.randint(0, 9))
        if t is BOOL:
            return LdConst(self.rng.random() < 0.5)
        # the unpublished address shows up rarely so most global accesses succeed
        return LdConst(self.rng.choices(ADDRESS_POOL, weights=(9, 9, 1))[0])

    def locals_of(self, p, t, movable=False):
        return [i for i, lt in enumerate(p.ltypes)
                if lt == t and p.bound[i] and i not in p.reserved and (not movable or i >= len(p.ins))]

    def pick_callee(self, p, pred):
        ok = [c for c in self.procs if c not in self.publishers
              if self.depth[c.qualname] < self.cfg.max_call_depth
              and p.cost + p.mult * self.cost[c.qualname] <= self.cfg.max_cost and pred(c)]
        return self.rng.choice(ok) if ok else None

    def args_for(self, p, callee, depth=1):
        code = []
        for t in callee.ins:
            e = self.expr(p, t, depth)
            if e is None:
                return None
            code.extend(e)
        return code

    def expr(self, p: _Proc, t, depth: int):
        """Instructions that push one value of type ``t``, or None."""
        opts = self.options(p, t, depth)
        self.rng.shuffle(opts)
        for weight_pass in (True, False):
            for w, fn in opts:
                if weight_pass and self.rng.random() > w:
                    continue
                saved = (list(p.bound), set(p.acquires))
                code = fn()
                if code is not None:
                    return code
                p.restore(saved[0])
                p.acquires = saved[1]
        return None

    def options(self, p: _Proc, t, depth: int):
        rng = self.rng
        opts = []

        def copy(i):
            return lambda: [CopyLoc(i)]

        def move(i):
            def f():
                p.bound[i] = False
                return [MoveLoc(i)]
            return f

        for i in self.locals_of(p, t):
            opts.append((0.6, copy(i)))
        for i in ([] if p.stable else self.locals_of(p, t, movable=True)):
            opts.append((0.25, move(i)))

        def call():
            c = self.pick_callee(p, lambda c: c.outs == (t,))
            if c is None:
                return None
            a = self.args_for(p, c, depth - 1)
            return None if a is None else a + [Call(c.qualname)]

        if depth > 0 and any(c.outs == (t,) for c in self.procs):
            opts.append((0.3, call))

        if isinstance(t, PrimType):
            opts.append((0.5, lambda: [self.const(t)]))
            if depth > 0:
                if t is INT:
                    opts.append((0.3, lambda: self.binop(p, rng.choice(("add", "sub", "mul")), INT, depth)))
                elif t is BOOL:
                    opts.append((0.2, lambda: self.binop(p, rng.choice(("lt", "le", "gt", "eq")), INT, depth)))
                    opts.append((0.1, lambda: self.unop(p, depth)))
                opts.append((0.35, lambda: self.read(p, t, depth)))
        elif isinstance(t, RecordType):
            if depth > 0:
                opts.append((0.6, lambda: self.pack(p, t, depth)))
                opts.append((0.3, lambda: self.read(p, t, depth)))
                if self.module_of(t.name) == p.module:
                    opts.append((0.1, lambda: self.global_op(p, MoveFrom, t.name)))
        elif t.mutable:
            v = t.target
            for i in self.locals_of(p, v):
                opts.append((0.6, (lambda i: lambda: [BorrowLoc(i)])(i)))
            for i, f in self.field_sources(p, v, True):
                opts.append((0.6, (lambda i, f: lambda: [BorrowField(f, i)])(i, f)))
            if isinstance(v, RecordType) and self.module_of(v.name) == p.module and depth > 0:
                opts.append((0.15, lambda: self.global_op(p, BorrowGlobal, v.name)))
        else:
            v = t.target
            for i, f in self.field_sources(p, v, False):
                opts.append((0.6, (lambda i, f: lambda: [BorrowField(f, i)])(i, f)))
            if depth > 0:
                def freeze():
                    e = self.expr(p, mut_ref(v), depth - 1)
                    return None if e is None else e + [FreezeRef()]
                opts.append((0.6, freeze))
        return opts

    def module_of(self, record):
        for r in self.records:
            if r.name == record:
                return r.module
        return None

    def field_sources(self, p, v, mutable):
        out = []
        for i, lt in enumerate(p.ltypes):
            if not (p.bound[i] and is_ref(lt) and lt.mutable == mutable and i not in p.reserved):
                continue
            if isinstance(lt.target, RecordType):
                for f, ft in self.record_fields(lt.target.name):
                    if ft == v:
                        out.append((i, f))
        return out

    def binop(self, p, op, arg, depth):
        a = self.expr(p, arg, depth - 1)
        b = self.expr(p, arg, depth - 1) if a is not None else None
        return None if b is None else a + b + [make_op(op, arg, arg)]

    def unop(self, p, depth):
        a = self.expr(p, BOOL, depth - 1)
        return None if a is None else a + [make_op("not", BOOL)]

    def read(self, p, t, depth):
        r = self.expr(p, RefType(t, self.rng.random() < 0.5), depth - 1)
        return None if r is None else r + [ReadRef()]

    def pack(self, p, t, depth):
        code = []
        for _, ft in self.record_fields(t.name):
            e = self.expr(p, ft, depth - 1)
            if e is None:
                return None
            code.extend(e)
        return code + [Pack(t.name)]

    def global_op(self, p, cls, name):
        a = self.expr(p, ADDR, 0)
        return None if a is None else a + [cls(name)]

    # ------------------------------------------------------------------ entry arguments
    def value(self, t):
        if t is INT:
            return self.rng.randint(0, 9)
        if t is BOOL:
            return self.rng.random() < 0.5
        if t is ADDR:
            return self.rng.choice(ADDRESSES)
        return Record(t.name, tuple((f, self.value(ft)) for f, ft in self.record_fields(t.name)))


def generate_case(seed: int, budget: int = 10, cfg: GenConfig = None) -> FuzzCase:
    g = _Gen(seed, budget, cfg or GenConfig())
    prog = g.build()
    entry = g.procs[-1]
    args = tuple(g.value(t) for t in entry.ins)
    return FuzzCase(seed, prog, entry.qualname, args)


def generate_program(seed: int, budget: int = 10, cfg: GenConfig = None) -> Program:
    return generate_case(seed, budget, cfg).program

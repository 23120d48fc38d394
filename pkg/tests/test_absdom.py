import functools

import pytest
from hypothesis import given, settings, strategies as st

from movebc import bgraph as bg
from movebc.absdom import (
    LocalState, PropagationError, freezable, initial_state, ls_leq, propagate, stack_effect, well_formed,
)
from movebc.bgraph import EMPTY, BorrowGraph, Edge, Local, Stack
from movebc.gen import generate_case
from movebc.ir import (
    ADDR, BOOL, EPS, INT, STAR, BorrowField, Call, CopyLoc, FreezeRef, MoveLoc, ReadRef, RecordType, Ret,
    StoreLoc, imm_ref, mut_ref, path,
)
from movebc.verifier import verify_program

from conftest import asm

COIN = RecordType("Coin")
PROG = asm("""
    module m
    record Coin { f: int }
    proc by_ref(&mut Coin) -> () locals 1 {
      0: Ret
    }
    proc by_val() -> () locals 2 {
      0: Ret
    }
    proc a(&mut int, &mut int) -> () locals 2 {
      0: Ret
    }
    proc two(int, &int) -> () locals 2 {
      0: Ret
    }
""")


def P(name):
    return PROG.proc(f"m::{name}")


def _fails(kind, proc, instr, ls):
    with pytest.raises(PropagationError) as ei:
        propagate(PROG, proc, instr, ls)
    assert ei.value.kind == kind
    return ei.value


def test_borrow_field_through_mutable_parameter():
    ls = initial_state(P("by_ref"))
    out = propagate(PROG, P("by_ref"), BorrowField("f", 0), ls)
    assert out.stack == (mut_ref(INT),)
    assert out.graph == BorrowGraph([Edge(Local(0, 0), path("f"), Stack(0))])


def test_move_of_borrowed_value_is_rejected():
    ls = LocalState((COIN, mut_ref(INT)), (), BorrowGraph([Edge(Local(0, 0), path("f"), Local(0, 1))]))
    err = _fails("MovedBorrowedValue", P("by_val"), MoveLoc(0), ls)
    assert err.position == Local(0, 0)


def test_moving_an_input_is_rejected():
    _fails("InputOverwrite", P("by_ref"), MoveLoc(0), initial_state(P("by_ref")))
    _fails("InputOverwrite", P("by_ref"), StoreLoc(0),
           LocalState((mut_ref(COIN),), (mut_ref(COIN),), EMPTY))


def test_call_with_aliased_mutable_arguments():
    # x -> S1 -> S0 with x in local 0
    ls = LocalState((INT, None), (mut_ref(INT), mut_ref(INT)),
                    BorrowGraph([Edge(Local(0, 0), EPS, Stack(0)), Edge(Stack(0), EPS, Stack(1))]))
    err = _fails("BorrowedMutArg", P("by_val"), Call("m::a"), ls)
    assert err.position == Stack(0)


def test_call_summary_for_returned_references():
    prog = asm("""
        module m
        record S { f: int }
        proc pick(&mut S, &S) -> (&mut int, &int) locals 2 {
          0: BorrowField f 0
          1: BorrowField f 1
          2: Ret
        }
        proc caller(&mut S, &S) -> () locals 2 {
          0: Ret
        }
    """)
    caller = prog.proc("m::caller")
    ls = propagate(prog, caller, CopyLoc(0), initial_state(caller))
    ls = propagate(prog, caller, CopyLoc(1), ls)
    out = propagate(prog, caller, Call("m::pick"), ls)
    # mutable output only from the mutable input; immutable output from both
    assert out.graph == BorrowGraph([
        Edge(Local(0, 0), STAR, Stack(0)), Edge(Local(0, 0), STAR, Stack(1)), Edge(Local(0, 1), STAR, Stack(1)),
    ])


def test_ret_of_borrowed_reference_parameter_is_accepted():
    prog = asm("""
        module m
        record S { f: int }
        proc r(&S) -> (&int) locals 1 {
          0: BorrowField f 0
          1: Ret
        }
    """)
    proc = prog.proc("m::r")
    ls = LocalState((imm_ref(RecordType("S")),), (imm_ref(INT),),
                    BorrowGraph([Edge(Local(0, 0), path("f"), Stack(0))]))
    assert propagate(prog, proc, Ret(), ls) == ls


def test_ret_of_borrowed_local_is_rejected():
    prog = asm("""
        module m
        proc r() -> (&int) locals 1 {
          0: Ret
        }
    """)
    ls = LocalState((INT,), (imm_ref(INT),), BorrowGraph([Edge(Local(0, 0), EPS, Stack(0))]))
    with pytest.raises(PropagationError) as ei:
        propagate(prog, prog.proc("m::r"), Ret(), ls)
    assert ei.value.kind == "RetBorrowedLocal"


def test_freezable():
    base = (mut_ref(INT), imm_ref(INT), mut_ref(INT))
    ls = LocalState(base, (), EMPTY)
    assert freezable(ls, Local(0, 0))
    to_mut = ls.with_graph(BorrowGraph([Edge(Local(0, 0), EPS, Local(0, 2))]))
    assert not freezable(to_mut, Local(0, 0))
    to_imm = ls.with_graph(BorrowGraph([Edge(Local(0, 0), EPS, Local(0, 1))]))
    assert freezable(to_imm, Local(0, 0))
    _fails("NotFreezable", P("by_val"), FreezeRef(),
           LocalState((mut_ref(INT), None), (mut_ref(INT),), BorrowGraph([Edge(Stack(0), EPS, Local(0, 0))])))
    _fails("NotFreezable", P("by_val"), ReadRef(),
           LocalState((mut_ref(INT), None), (mut_ref(INT),), BorrowGraph([Edge(Stack(0), EPS, Local(0, 0))])))


def test_ls_leq():
    ls = LocalState((INT,), (BOOL,), BorrowGraph([Edge(Local(0, 0), path("f", "g"), Stack(0))]))
    assert ls_leq(ls, ls)
    assert not ls_leq(ls, LocalState((INT,), (), ls.graph))
    assert ls_leq(ls, ls.with_graph(bg.widen_paths(ls.graph, 1)))


def test_initial_state():
    prog = asm("""
        module m
        record T { f: int }
        proc p(int, &T) -> () locals 3 acquires T {
          0: Ret
        }
        proc q() -> () locals 0 {
          0: Ret
        }
    """)
    ls = initial_state(prog.proc("m::p"))
    assert ls.locals == (INT, imm_ref(RecordType("T")), None)
    assert ls.stack == () and ls.graph == EMPTY
    assert initial_state(prog.proc("m::q")) == LocalState((), (), EMPTY)
    assert well_formed(prog.proc("m::p"), ls) == []


def test_well_formedness_failures():
    proc = P("two")
    ls = LocalState((INT, None), (), EMPTY)
    assert any("unbound" in r for r in well_formed(proc, ls))
    ls = LocalState((INT, imm_ref(INT)), (imm_ref(INT),), BorrowGraph([Edge(Stack(0), EPS, Local(0, 1))]))
    assert any("into an input" in r for r in well_formed(proc, ls))
    ls = LocalState((INT, imm_ref(INT)), (), BorrowGraph([Edge(Stack(3), EPS, Local(0, 0))]))
    assert any("outside the domain" in r for r in well_formed(proc, ls))


def test_global_rules():
    prog = asm("""
        module m
        record T { v: int }
        proc g(addr) -> () locals 1 acquires T {
          0: Ret
        }
        proc h(addr) -> () locals 1 {
          0: Ret
        }
    """)
    from movebc.ir import BorrowGlobal, MoveFrom
    from movebc.bgraph import GlobalNode
    g_, h_ = prog.proc("m::g"), prog.proc("m::h")
    ls = LocalState((ADDR,), (ADDR,), EMPTY)
    out = propagate(prog, g_, BorrowGlobal("T"), ls)
    assert out.graph == BorrowGraph([Edge(GlobalNode("T"), EPS, Stack(0))])
    with pytest.raises(PropagationError) as ei:
        propagate(prog, h_, MoveFrom("T"), ls)
    assert ei.value.kind == "MissingAcquires"
    held = LocalState((ADDR,), (mut_ref(RecordType("T")), ADDR), BorrowGraph([Edge(GlobalNode("T"), EPS, Stack(0))]))
    with pytest.raises(PropagationError) as ei:
        propagate(prog, g_, MoveFrom("T"), held)
    assert ei.value.kind == "GlobalBorrowed"


# properties over the annotations of generated programs

@functools.lru_cache(maxsize=None)
def _annotated(n_seeds=120):
    out = []
    for seed in range(n_seeds):
        case = generate_case(seed)
        report = verify_program(case.program)
        for q, anns in report.annotations.items():
            if anns is None:
                continue
            proc = case.program.proc(q)
            out.extend((case.program, proc, i, ls) for i, ls in enumerate(anns) if ls is not None)
    return tuple(out)


def test_propagation_preserves_well_formedness_and_stack_effect():
    samples = _annotated()
    assert len(samples) > 1000
    for prog, proc, i, ls in samples:
        instr = proc.code[i]
        out = propagate(prog, proc, instr, ls)
        assert well_formed(proc, out) == [], (proc.qualname, i)
        if not isinstance(instr, Ret):
            pops, pushes = stack_effect(prog, instr)
            assert len(out.stack) - len(ls.stack) == pushes - pops
        for e in out.graph:
            assert not (e.dst.kind == bg.LOCAL and proc.is_input(e.dst.index))
            t = out.type_at(e.dst)
            assert t is not None and hasattr(t, "mutable"), (proc.qualname, i, e)


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_propagation_is_monotone(data):
    samples = _annotated()
    prog, proc, i, ls = samples[data.draw(st.integers(0, len(samples) - 1))]
    bigger = ls.graph
    positions = sorted({p for e in ls.graph for p in (e.src, e.dst)}
                       | {Local(0, k) for k, t in enumerate(ls.locals) if t is not None}
                       | {Stack(k) for k in range(len(ls.stack))})
    if data.draw(st.booleans()):
        bigger = bg.widen_paths(bigger, 1)
    if len(positions) >= 2:
        src, dst = data.draw(st.sampled_from(positions)), data.draw(st.sampled_from(positions))
        lab = data.draw(st.sampled_from([EPS, STAR, path("f"), path("g", ext=True)]))
        if src != dst:
            bigger = BorrowGraph(bigger.edges | {Edge(src, lab, dst)})
    big = ls.with_graph(bigger)
    if well_formed(proc, big):
        return
    small_out = propagate(prog, proc, proc.code[i], ls)
    try:
        big_out = propagate(prog, proc, proc.code[i], big)
    except (PropagationError, bg.GraphError):
        return
    assert bg.graph_leq(small_out.graph, big_out.graph)

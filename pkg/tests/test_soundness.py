from hypothesis import given, settings, strategies as st

from movebc.bgraph import BorrowGraph, Edge, GlobalNode, Local, Stack
from movebc.gen import generate_case
from movebc.interp import Frame, Record, Ref, State, init_state, parse_value, step
from movebc.ir import EPS, STAR, Address, Call, path
from movebc.soundness import (
    abstract_state, check_invariants, differential_run, edge_realized, _alias_check,
)
from movebc.verifier import verify_program


def _entry_name(entry, short):
    return next(q for q in entry.program.procs if q.endswith("::" + short))


def _advance(prog, s, n):
    for _ in range(n):
        step(prog, s)
    return s


# realized edges

def test_edge_realized_cases():
    s = State([Frame("m::p", 0, [0, Ref(0, ("f",)), Ref(0, ("f", "g", "h")), Ref(1, ())])], [],
              {0: None, 1: None}, {})
    c, cf, cfgh, other = Local(0, 0), Local(0, 1), Local(0, 2), Local(0, 3)
    assert edge_realized(s, c, cf, path("f"))
    assert edge_realized(s, cf, cfgh, path("g", ext=True))
    assert not edge_realized(s, cf, cfgh, path("g"))
    assert not edge_realized(s, c, other, EPS)
    assert edge_realized(s, c, cfgh, STAR)


def test_global_edges_need_a_cell_of_that_type():
    s = State([Frame("m::p", 0, [Ref(5, ())])], [], {5: None}, {("T", Address(1)): 5})
    assert edge_realized(s, GlobalNode("T"), Local(0, 0), EPS)
    assert not edge_realized(s, GlobalNode("U"), Local(0, 0), EPS)


# abstraction

def test_entry_state_abstraction(corpus):
    entry = corpus["global_counter"]
    report = verify_program(entry.program)
    s = init_state(entry.program, "bank::main", [])
    a = abstract_state(entry.program, report.annotations, s)
    assert a.frames == [("bank::main", 0, ())]
    assert a.stack == () and len(a.graph) == 0
    assert check_invariants(entry.program, report.annotations, s) == []


def test_two_frame_abstraction(corpus):
    entry = corpus["call_chain"]
    prog = entry.program
    report = verify_program(prog)
    s = _advance(prog, init_state(prog, "pairs::main", []), 9)
    assert [f.proc for f in s.callstack] == ["pairs::main", "pairs::incr"]
    a = abstract_state(prog, report.annotations, s)
    # caller stack loses the argument; its edge now ends at the callee's parameter
    assert a.stack == ()
    assert a.graph == BorrowGraph([Edge(Local(0, 0), STAR, Local(1, 0))])
    assert check_invariants(prog, report.annotations, s) == []


def test_global_nodes_are_tagged_with_their_frame(corpus):
    entry = corpus["global_counter"]
    prog = entry.program
    report = verify_program(prog)
    s = init_state(prog, "bank::main", [])
    while not (s.top.proc == "bank::bump" and s.top.pc == 3):
        step(prog, s)
    a = abstract_state(prog, report.annotations, s)
    assert a.graph == BorrowGraph([Edge(GlobalNode("Counter", 1), EPS, Local(1, 1))])
    assert check_invariants(prog, report.annotations, s) == []


def test_borrow_edge_is_realized_after_borrowloc(corpus):
    entry = corpus["loop_reborrow"]
    prog = entry.program
    report = verify_program(prog)
    s = _advance(prog, init_state(prog, "loops::triangle", [3]), 11)
    assert s.top.pc == 11
    a = abstract_state(prog, report.annotations, s)
    (e,) = a.graph
    assert (e.src, e.label, e.dst) == (Local(0, 1), EPS, Stack(0))
    assert edge_realized(s, e.src, e.dst, e.label)
    assert check_invariants(prog, report.annotations, s) == []


def test_dropping_a_memory_cell_breaks_ownership(corpus):
    entry = corpus["loop_reborrow"]
    prog = entry.program
    report = verify_program(prog)
    s = _advance(prog, init_state(prog, "loops::triangle", [3]), 4)
    owned = s.top.locals[1]
    del s.memory[owned]
    kinds = {v.invariant for v in check_invariants(prog, report.annotations, s)}
    assert kinds & {"TypeAgreement", "Ownership"}
    s2 = _advance(prog, init_state(prog, "loops::triangle", [3]), 4)
    s2.memory[99] = 0
    assert [v.invariant for v in check_invariants(prog, report.annotations, s2)] == ["Ownership"]


def test_erased_borrows_are_detected(corpus):
    entry = corpus["loop_reborrow"]
    prog = entry.program
    report = verify_program(prog)
    ann = {q: [ls.with_graph(BorrowGraph()) if ls else ls for ls in a] for q, a in report.annotations.items()}
    s = _advance(prog, init_state(prog, "loops::triangle", [3]), 11)
    # the fresh reference has no edge into it, and nothing witnesses its overlap with local 1
    assert {v.invariant for v in check_invariants(prog, ann, s)} == {"NoDangling", "PathWitness"}


def test_overlapping_mutable_references_violate_transparency():
    from movebc.absdom import LocalState
    from conftest import asm
    from movebc.ir import INT, mut_ref
    prog = asm("""
        module m
        proc p() -> () locals 3 {
          0: Ret
        }
    """)
    ls = LocalState((INT, mut_ref(INT), mut_ref(INT)), (),
                    BorrowGraph([Edge(Local(0, 0), EPS, Local(0, 1)), Edge(Local(0, 0), EPS, Local(0, 2))]))
    s = State([Frame("m::p", 0, [0, Ref(0, ()), Ref(0, ())])], [], {0: 1}, {}, 1)
    kinds = [v.invariant for v in check_invariants(prog, {"m::p": [ls]}, s)]
    assert "PathWitness" in kinds


def test_alias_check_on_call():
    from conftest import asm
    prog = asm("""
        module m
        record S { f: int }
        proc b(&mut S, &mut int) -> () locals 2 {
          0: Ret
        }
    """)
    s = State([Frame("m::x", 0, [])], [Ref(0, ()), Ref(0, ("f",))], {0: Record("S", (("f", 1),))}, {})
    assert "overlaps" in _alias_check(prog, s, Call("m::b"))
    s.operands = [Ref(0, ()), Ref(1, ())]
    assert _alias_check(prog, s, Call("m::b")) is None


# differential runs

def test_verified_corpus_runs_clean(corpus):
    for entry in corpus.values():
        if entry.run is None:
            continue
        name, *args = entry.run
        report = verify_program(entry.program)
        res = differential_run(entry.program, report, _entry_name(entry, name), [parse_value(a) for a in args])
        assert res.ok and res.status == "halted", (entry.name, res.violation)
        assert res.steps > 0


def test_harness_reports_init_problems(corpus):
    entry = corpus["loop_reborrow"]
    res = differential_run(entry.program, verify_program(entry.program), "loops::triangle", [])
    assert res.violation.invariant == "Init"


def test_trace_is_recorded(corpus):
    entry = corpus["global_counter"]
    res = differential_run(entry.program, verify_program(entry.program), "bank::main", [], record_trace=True)
    assert len(res.trace) == res.steps
    assert res.trace[0] == "pc=0 proc=bank::main instr=LdConst stack=1"


def test_fuel_status(corpus):
    entry = corpus["loop_reborrow"]
    res = differential_run(entry.program, verify_program(entry.program), "loops::triangle", [50], fuel=20)
    assert res.ok and res.status == "fuel"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 1_000_000))
def test_generated_programs_keep_the_invariants(seed):
    case = generate_case(seed)
    report = verify_program(case.program)
    if not report.verified:
        return
    res = differential_run(case.program, report, case.entry, case.args)
    assert res.ok, (seed, str(res.violation))
    assert res.status in ("halted", "abort", "fuel")


def test_abstract_graphs_stay_acyclic_on_generated_runs():
    checked = 0
    for seed in range(40):
        case = generate_case(seed)
        report = verify_program(case.program)
        if not report.verified:
            continue
        s = init_state(case.program, case.entry, case.args)
        for _ in range(300):
            if not s.callstack:
                break
            assert abstract_state(case.program, report.annotations, s).graph.is_acyclic()
            checked += 1
            from movebc.interp import Running
            if not isinstance(step(case.program, s), Running):
                break
    assert checked > 100

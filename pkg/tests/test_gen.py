from collections import Counter
from pathlib import Path

from hypothesis import given, settings, strategies as st

from movebc.gen import GenConfig, generate_case, generate_program
from movebc.ir import format_program, validate_structure
from movebc.verifier import build_cfg, check_stack_usage, verify_program

GOLDEN = Path(__file__).parent / "golden" / "seed0_budget10.mvasm"


def test_seed_zero_matches_golden_file():
    assert format_program(generate_program(0, 10)) == GOLDEN.read_text()


def test_generation_is_deterministic():
    for seed in (1, 17, 4242):
        a, b = generate_case(seed), generate_case(seed)
        assert a.program == b.program and a.entry == b.entry and a.args == b.args


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 20))
def test_programs_are_structurally_valid(seed, budget):
    case = generate_case(seed, budget)
    prog = case.program
    assert validate_structure(prog) == []
    for p in prog.procs.values():
        assert check_stack_usage(prog, p, build_cfg(p)) == []
    entry = prog.proc(case.entry)
    assert len(case.args) == len(entry.ins)


def test_size_limits():
    cfg = GenConfig()
    for seed in range(200):
        prog = generate_program(seed)
        assert len(prog.modules) <= cfg.max_modules
        assert len(prog.procs) <= cfg.max_procs
        assert len(prog.records) <= cfg.max_records


def test_verdict_mix_over_ten_thousand_seeds():
    n = 10_000
    verdicts = Counter(verify_program(generate_program(seed)).verified for seed in range(n))
    assert verdicts[True] >= 0.2 * n, verdicts
    assert verdicts[False] >= 0.2 * n, verdicts


def test_rejections_cover_many_rules():
    kinds = Counter()
    for seed in range(400):
        report = verify_program(generate_program(seed))
        if not report.verified:
            kinds[report.diagnostics[0].kind] += 1
    expected = {"MovedBorrowedValue", "WriteBorrowedRef", "GlobalBorrowed", "RetBorrowedLocal",
                "NotFreezable", "JoinMismatch", "OverwriteBorrowedValue", "MissingAcquires"}
    assert expected <= set(kinds), kinds

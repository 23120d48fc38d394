"""A small bytecode language with a reference-safety verifier.

Modules:

- ``ir``: types, instructions, programs and the assembly format
- ``interp``: the concrete interpreter
- ``bgraph``: borrow graphs
- ``absdom``: abstract states and per-instruction propagation
- ``verifier``: CFG, stack, acquires and borrow-fixpoint passes
- ``soundness``: invariant checking and differential runs
- ``gen``: the random program generator
"""

from .ir import AsmError, Program, format_program, parse_program, validate_structure
from .interp import Fault, FaultKind, Halted, init_state, run, step
from .verifier import verify_program
from .soundness import check_invariants, differential_run
from .gen import generate_case, generate_program

__all__ = [
    "AsmError", "Program", "format_program", "parse_program", "validate_structure",
    "Fault", "FaultKind", "Halted", "init_state", "run", "step",
    "verify_program", "check_invariants", "differential_run",
    "generate_case", "generate_program",
]
__version__ = "0.1.0"

"""Verify a small program and print the borrow graph the checker keeps at every offset."""

from movebc.ir import parse_program
from movebc.verifier import verify_program

SOURCE = """\
module walk
record P { x: int, y: int }
proc bump(&mut P) -> () locals 2 {
  0: BorrowField x 0
  1: StoreLoc 1
  2: CopyLoc 1
  3: ReadRef
  4: LdConst 1
  5: Op add int int -> int
  6: MoveLoc 1
  7: WriteRef
  8: Ret
}
"""


def main():
    prog = parse_program(SOURCE)
    report = verify_program(prog)
    proc = prog.proc("walk::bump")
    print(f"walk::bump verified: {report.verdict('walk::bump')}")
    for offset, (instr, state) in enumerate(zip(proc.code, report.annotations["walk::bump"])):
        edges = ", ".join(str(e) for e in state.graph) or "-"
        print(f"{offset:>3}  {type(instr).__name__:<12} {edges}")


if __name__ == "__main__":
    main()

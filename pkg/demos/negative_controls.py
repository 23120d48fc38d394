"""Run the rejected corpus programs anyway and show the interpreter catching the unsafe access."""

from movebc import interp
from movebc.corpus import load_corpus
from movebc.verifier import verify_program


def main():
    for name, entry in load_corpus().items():
        if entry.control is None:
            continue
        report = verify_program(entry.program)
        first = report.diagnostics[0]
        qual = next(q for q in entry.program.procs if q.split("::")[1] == entry.control)
        outcome = interp.run(entry.program, qual, [])
        print(f"{name}")
        print(f"  verifier:    {first}")
        print(f"  unverified:  {outcome}")


if __name__ == "__main__":
    main()

"""Generate programs, verify them, and run each verified one under per-step invariant checks."""

import argparse
import collections
import time

from movebc.gen import generate_case
from movebc.soundness import differential_run
from movebc.verifier import verify_program


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=500)
    ap.add_argument("--budget", type=int, default=10)
    args = ap.parse_args(argv)

    rejections = collections.Counter()
    statuses = collections.Counter()
    t0 = time.perf_counter()
    for seed in range(args.seeds):
        case = generate_case(seed, args.budget)
        report = verify_program(case.program)
        if not report.verified:
            rejections[report.diagnostics[0].kind] += 1
            continue
        res = differential_run(case.program, report, case.entry, case.args)
        statuses[res.status] += 1
        if res.violation is not None:
            print(f"seed {seed}: {res.violation}")
    print(f"{args.seeds} seeds in {time.perf_counter() - t0:.1f} s")
    print("verified runs:", dict(statuses))
    print("rejections:   ", dict(rejections.most_common()))


if __name__ == "__main__":
    main()

"""Run many random scenarios and compare against the plaintext oracle.

    python scripts/sweep.py --runs 1000 --jitter 0.02
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

from smcgate.checks import run_checks
from smcgate.cli import scenario_codec
from smcgate.config import Params
from smcgate.randomized import plaintext_oracle, random_scenario
from smcgate.scenario import run_sim


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--jitter", type=float, default=0.0)
    args = ap.parse_args(argv)

    params = replace(Params(), jitter=args.jitter)
    failures = 0
    start = time.perf_counter()
    for seed in range(args.first_seed, args.first_seed + args.runs):
        sc = random_scenario(seed, params=params)
        res = run_sim(sc)
        n = len(sc.sources)
        for row in res.results:
            agg = row["request_id"].split("-", 1)[1]
            expected = plaintext_oracle(sc, agg)
            tolerance = 2**-16 * n if agg == "average" else 0.0
            if row["outcome"] != "ok" or abs(row["value"] - expected) > tolerance:
                failures += 1
                print(f"seed {seed} {agg}: got {row.get('value', row.get('error'))}, expected {expected}")
        failed = [c.name for c in run_checks(res.transcript, sc.readings(), scenario_codec(sc), res.logs) if not c.passed]
        if failed:
            failures += 1
            print(f"seed {seed}: checks failed {failed}")
    print(f"{args.runs} scenarios, {failures} failures, {time.perf_counter() - start:.1f}s")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())

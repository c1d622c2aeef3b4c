"""Scenario runner.

    smcgate --scenario scenarios/smoke.json --out out/smoke
    smcgate --scenario scenarios/smoke.json --verify-only out/smoke/transcript.jsonl

Artifacts written to --out: results.jsonl (one line per request),
transcript.jsonl, report.json and transparency/<source>.jsonl.
Exit status is 0 iff every invariant check passes, 1 if one fails and
2 for configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checks import CheckResult, run_checks
from .errors import ConfigError
from .field import FixedPointCodec
from .scenario import GATEWAY, RunResult, Scenario, run_sim
from .source import TransparencyLog
from .transport import Transcript
from .wire import canonical_dumps

log = logging.getLogger("smcgate")


def scenario_codec(scenario: Scenario) -> FixedPointCodec:
    p = scenario.params
    return FixedPointCodec(p.fraction_bits, p.half_range, p.max_participants, p.modulus)


def build_report(checks: list[CheckResult], transcript: Transcript, run: RunResult | None = None) -> dict:
    report = {
        "passed": all(c.passed for c in checks),
        "checks": [c.to_dict() for c in checks],
        "transcript_sha256": transcript.sha256(),
        "frames": len(transcript),
    }
    if run is not None:
        report["restart_count"] = {r["request_id"]: r["restarts"] for r in run.results}
        report["end_time"] = run.end_time
    return report


def determinism_check(scenario: Scenario, first_hash: str) -> CheckResult:
    again = run_sim(scenario).transcript.sha256()
    ok = again == first_hash
    return CheckResult("determinism", ok, [] if ok else [{"first": first_hash, "second": again}])


def write_lines(path: Path, rows: list[dict]) -> None:
    path.write_bytes(b"".join(canonical_dumps(r) + b"\n" for r in rows))


def run_scenario(path: str, transport: str | None, seed: int | None, out: str | None, time_scale: float) -> int:
    try:
        scenario = Scenario.load(path)
        if transport is not None:
            scenario = replace(scenario, transport=transport)
        if seed is not None:
            scenario = replace(scenario, seed=seed)
        if scenario.transport == "socket" and scenario.faults:
            raise ConfigError(path, "the socket transport runs fault-free scenarios only")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(out or Path("out") / (scenario.name or Path(path).stem))
    log_dir = out_dir / "transparency"
    log_dir.mkdir(parents=True, exist_ok=True)

    if scenario.transport == "sim":
        run = run_sim(scenario, log_dir)
    else:
        from .socket_transport import run_socket

        run = run_socket(scenario, log_dir, time_scale=time_scale)

    checks = run_checks(run.transcript, scenario.readings(), scenario_codec(scenario), run.logs, GATEWAY)
    if scenario.transport == "sim":
        checks.append(determinism_check(scenario, run.transcript.sha256()))
    report = build_report(checks, run.transcript, run)

    write_lines(out_dir / "results.jsonl", run.results)
    run.transcript.write(out_dir / "transcript.jsonl")
    (out_dir / "report.json").write_bytes(canonical_dumps(report) + b"\n")

    for r in run.results:
        shown = r.get("value", r.get("error", "-"))
        print(f"{r['request_id']:<12} {r['outcome']:<12} {shown!s:<20} restarts={r['restarts']}")
    print_checks(checks)
    print(f"transcript sha256 {report['transcript_sha256']}  ({len(run.transcript)} frames)")
    print(f"artifacts in {out_dir}")
    return 0 if report["passed"] else 1


def verify_transcript(transcript_path: str, scenario_path: str) -> tuple[int, dict]:
    try:
        scenario = Scenario.load(scenario_path)
        transcript = Transcript.load(transcript_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2, {}
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {transcript_path}: {exc}", file=sys.stderr)
        return 2, {}
    log_dir = Path(transcript_path).parent / "transparency"
    logs = {s.id: TransparencyLog(log_dir / f"{s.id}.jsonl") for s in scenario.sources}
    checks = run_checks(transcript, scenario.readings(), scenario_codec(scenario), logs, GATEWAY)
    print_checks(checks)
    report = build_report(checks, transcript)
    return (0 if report["passed"] else 1), report


def print_checks(checks: list[CheckResult]) -> None:
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name}")
        for v in c.violations[:10]:
            print(f"        {v}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="smcgate", description=__doc__.split("\n\n")[0])
    parser.add_argument("--scenario", required=True, help="scenario file")
    parser.add_argument("--transport", choices=("sim", "socket"), help="override the scenario's transport")
    parser.add_argument("--seed", type=int, help="override the scenario's seed")
    parser.add_argument("--out", help="artifact directory (default out/<scenario name>)")
    parser.add_argument("--verify-only", metavar="TRANSCRIPT", help="only check an existing transcript")
    parser.add_argument(
        "--time-scale", type=float, default=1.0, help="wall-clock seconds per protocol second (socket only)"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    if args.verify_only:
        code, _ = verify_transcript(args.verify_only, args.scenario)
        return code
    return run_scenario(args.scenario, args.transport, args.seed, args.out, args.time_scale)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: scans, audits, scenario runs, latency calibration.

Exit codes: 0 clean, 1 confirmed findings, 2 usage or runtime error,
3 partial results (a check aborted and nothing was confirmed).

Suspicious-grade findings never affect the exit code: they are advisory
context for a human, and treating them as detections would make the exit
code useless on ordinary systems (every scan from a pipe, every sandboxed
process, would "detect" something).

Output discipline: in machine mode stdout carries the report bytes and
nothing else; every diagnostic goes to stderr. Same argv against the same
system state produces the same stdout bytes and the same exit code. The
tool reads no environment variables to make decisions — the scanner's own
environment is *inspected* (as audit subject matter) but never *obeyed*.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable, Sequence

from .report import render_machine, render_text
from .scan import (
    AUDIT_CHECKS,
    DEFAULT_MIN_PID,
    DEFAULT_ROUNDS,
    Family,
    ScanConfig,
    full_scan,
)
from .types import Confidence, GhostscanError, PidSpaceTooLarge
from .view import SystemView

#: Executable-mapping prefixes trusted by default on a live system:
#: distro-managed library roots. Deliberately absent: /usr/local/lib (sans
#: the interpreter tree), /opt, /tmp, /dev/shm, and home directories —
#: the places drop-in interposer libraries actually live.
DEFAULT_LIVE_ALLOWLIST = (
    "/lib/",
    "/lib64/",
    "/usr/lib/",
    "/usr/lib64/",
    "/usr/libexec/",
    "/usr/local/lib/python",
)

_FAMILY_NAMES = tuple(f.value for f in Family)
_CHECK_NAMES = _FAMILY_NAMES + ("count",) + AUDIT_CHECKS


def _split_checks(raw: str) -> tuple[tuple[Family, ...], bool, tuple[str, ...]]:
    """Parse --checks into (families, count_check, audit names).

    The vocabulary is the check names a report lists: the four scan
    families, "count", and the audit names.
    """
    names = [n.strip() for n in raw.split(",") if n.strip()]
    if not names:
        raise ValueError("--checks needs at least one name")
    unknown = [n for n in names if n not in _CHECK_NAMES]
    if unknown:
        raise ValueError(
            f"unknown check name(s) {', '.join(unknown)}; "
            f"valid: {', '.join(_CHECK_NAMES)}"
        )
    families = tuple(f for f in Family if f.value in names)
    audits = tuple(a for a in AUDIT_CHECKS if a in names)
    return families, "count" in names, audits


def _read_allowlist(path: str) -> tuple[str, ...]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return tuple(
        line.strip() for line in lines if line.strip() and not line.lstrip().startswith("#")
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghostscan",
        description="Find processes hidden from the process listing by cross-checking "
        "the listing against direct kernel probes, and audit the environment "
        "for the machinery that does the hiding.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p: argparse.ArgumentParser, *, sweeps: bool) -> None:
        p.add_argument(
            "--checks",
            default=None,
            metavar="NAMES",
            help="comma-separated subset of: " + ", ".join(_CHECK_NAMES),
        )
        p.add_argument("--output", choices=("text", "machine"), default="text",
                       help="report format on stdout (default: text)")
        if sweeps:
            p.add_argument("--min-pid", type=int, default=DEFAULT_MIN_PID,
                           help=f"lowest pid swept (default {DEFAULT_MIN_PID})")
            p.add_argument("--rounds", type=int, default=DEFAULT_ROUNDS,
                           help="rounds a finding must survive (default "
                           f"{DEFAULT_ROUNDS})")
            p.add_argument("--workers", type=int, default=1,
                           help="parallel sweep workers (default 1)")
            p.add_argument("--budget-override", action="store_true",
                           help="run even when the sweep exceeds the probe budget")
        p.add_argument("--allowlist", metavar="PATH", default=None,
                       help="file of path prefixes trusted as executable mappings "
                       "(one per line, # comments); replaces the built-in list")
        p.add_argument("--latency-factor", type=float, default=10.0,
                       help="syscall-latency multiple over baseline that counts "
                       "as an outlier (default 10)")

    p_scan = sub.add_parser("scan", help="run the cross-view scan on this machine")
    add_common(p_scan, sweeps=True)

    p_audit = sub.add_parser("audit", help="run only the environment audits")
    add_common(p_audit, sweeps=False)

    p_sim = sub.add_parser(
        "simulate", help="run scenario files offline and diff outcomes against "
        "their expected detection matrices"
    )
    p_sim.add_argument("paths", nargs="+", metavar="SCENARIO",
                       help="scenario files or directories of *.yaml")
    p_sim.add_argument("--workers", type=int, default=1,
                       help="parallel sweep workers (default 1)")

    p_cal = sub.add_parser(
        "calibrate", help="measure syscall latency through both entry paths"
    )
    p_cal.add_argument("--samples", type=int, default=4096,
                       help="sample count per path (default 4096)")

    return parser


def _make_live_view() -> SystemView:
    from .liveview import LiveView  # late import: builds the helper

    return LiveView()


def _emit(report, output: str) -> None:
    if output == "machine":
        sys.stdout.write(render_machine(report))
    else:
        sys.stdout.write(render_text(report))
    sys.stdout.flush()


def _exit_code(report) -> int:
    confirmed = any(a.confidence is Confidence.CONFIRMED for a in report.anomalies)
    if confirmed:
        return 1
    if report.partial:
        return 3
    return 0


def _cmd_scan(ns: argparse.Namespace, make_view: Callable[[], SystemView]) -> int:
    if ns.checks is None:
        families, count_check, audits = tuple(Family), True, AUDIT_CHECKS
    else:
        families, count_check, audits = _split_checks(ns.checks)
    allowlist = (
        _read_allowlist(ns.allowlist) if ns.allowlist else DEFAULT_LIVE_ALLOWLIST
    )
    cfg = ScanConfig(
        families=families,
        min_pid=ns.min_pid,
        double_check_rounds=ns.rounds,
        worker_count=ns.workers,
        budget_override=ns.budget_override,
        run_audits=bool(audits),
        audits=audits or AUDIT_CHECKS,
        count_check=count_check,
        mapped_allowlist=allowlist,
        latency_factor=ns.latency_factor,
    )
    view = make_view()
    try:
        report = full_scan(view, cfg)
    finally:
        close = getattr(view, "close", None)
        if close:
            close()
    _emit(report, ns.output)
    return _exit_code(report)


def _cmd_audit(ns: argparse.Namespace, make_view: Callable[[], SystemView]) -> int:
    if ns.checks is None:
        audits = AUDIT_CHECKS
    else:
        families, count_check, audits = _split_checks(ns.checks)
        if families or count_check:
            raise ValueError("audit accepts audit check names only")
        if not audits:
            raise ValueError("--checks needs at least one audit name")
    allowlist = (
        _read_allowlist(ns.allowlist) if ns.allowlist else DEFAULT_LIVE_ALLOWLIST
    )
    cfg = ScanConfig(
        families=(),
        count_check=False,
        run_audits=True,
        audits=audits,
        mapped_allowlist=allowlist,
        latency_factor=ns.latency_factor,
    )
    view = make_view()
    try:
        report = full_scan(view, cfg)
    finally:
        close = getattr(view, "close", None)
        if close:
            close()
    _emit(report, ns.output)
    return _exit_code(report)


def _scenario_files(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(p.glob("*.yaml")))
        elif p.is_file():
            files.append(p)
        else:
            raise FileNotFoundError(raw)
    if not files:
        raise FileNotFoundError("no scenario files found")
    return files


def _cmd_simulate(ns: argparse.Namespace) -> int:
    from .scenario import parse_scenario, run_scenario

    files = _scenario_files(ns.paths)
    mismatches = 0
    for path in files:
        sc = parse_scenario(path.read_text(encoding="utf-8"), name_hint=path.stem)
        result = run_scenario(sc, worker_count=ns.workers)
        if result.ok:
            print(f"ok       {sc.name}")
        else:
            mismatches += 1
            print(f"MISMATCH {sc.name}")
            for diff in result.diffs:
                print(f"         {diff}")
    print(f"scenarios: {len(files)} mismatches: {mismatches}")
    return 0 if mismatches == 0 else 1


def _cmd_calibrate(ns: argparse.Namespace, make_view: Callable[[], SystemView]) -> int:
    samples = max(1, ns.samples)
    view = make_view()
    try:
        in_process = view.syscall_latency_ns(samples)
        baseline = view.latency_baseline_ns()
    finally:
        close = getattr(view, "close", None)
        if close:
            close()
    print(f"in-process syscall median: {in_process:.0f} ns")
    if baseline is None:
        print("direct-entry baseline: unavailable")
    else:
        print(f"direct-entry baseline: {baseline:.0f} ns")
    return 0


def run(
    argv: Sequence[str] | None = None,
    *,
    make_view: Callable[[], SystemView] | None = None,
) -> int:
    """Parse argv and execute; returns the process exit code.

    `make_view` injects a view factory for the live subcommands (tests use
    a simulated view; the default builds the live backend).
    """
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)

    live_needed = ns.subcommand in ("scan", "audit", "calibrate")
    if live_needed and make_view is None:
        if sys.platform != "linux":
            print("error: this subcommand inspects a live system and requires Linux",
                  file=sys.stderr)
            return 2
        make_view = _make_live_view

    try:
        if ns.subcommand == "scan":
            return _cmd_scan(ns, make_view)
        if ns.subcommand == "audit":
            return _cmd_audit(ns, make_view)
        if ns.subcommand == "simulate":
            return _cmd_simulate(ns)
        if ns.subcommand == "calibrate":
            return _cmd_calibrate(ns, make_view)
    except PidSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GhostscanError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable: unknown subcommand")


def main() -> None:
    sys.exit(run())

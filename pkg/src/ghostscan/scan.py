"""Scan families: cross-view sweeps that diff listing against kernel answers.

Four families, all reading exclusively through a SystemView:

  proc     unlisted pids probed through the /proc filesystem (stat/chdir/opendir)
  sys      unlisted pids probed through pid-directed syscalls (getpriority, ...)
  brute    pid-claim sweep over the whole pid space; on views that cannot claim
           pids (live systems — real process creation is out of scope) it
           downgrades to the full probe battery
  reverse  the ghost check: a listed pid that no kernel probe confirms

Every anomaly must survive `double_check_rounds` full rounds (re-listing each
time) before it is reported; processes that appear or exit mid-scan produce
findings in some rounds only and are suppressed. This is the false-positive
guard the sweep approach needs on live systems.

A sweep semantically covers every pid in [min_pid, pid_max] exactly once per
round per family. The notional probe count (range x probe kinds x rounds,
summed over families) is charged against a budget before anything runs;
crossing it without an explicit override raises PidSpaceTooLarge.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import __version__
from .report import Counters, ReportHeader, ScanReport
from .types import (
    ALL_PROBES,
    FS_PROBES,
    SYSCALL_PROBES,
    Anomaly,
    AnomalyKind,
    Confidence,
    Evidence,
    PidSpaceTooLarge,
    ProbeKind,
    ProbeOutcome,
    UnsupportedProbe,
    Verdict,
    ViewUnavailable,
    merge_anomalies,
)
from .view import SystemView

TOOL_NAME = "ghostscan"
DEFAULT_MIN_PID = 301          # below this, pid reuse and kernel threads drown signal
DEFAULT_ROUNDS = 2
DEFAULT_BUDGET = 64_000_000    # notional probes before an override is demanded


class Family(enum.Enum):
    PROC = "proc"
    SYS = "sys"
    BRUTE = "brute"
    REVERSE = "reverse"


FAMILY_ORDER = (Family.PROC, Family.SYS, Family.BRUTE, Family.REVERSE)

#: Audit check names, in the order they run. "dirents" only does work when
#: audit_dirs is non-empty.
AUDIT_CHECKS = ("preload", "namespaces", "proc-mount", "pid-max", "tracer",
                "output", "dirents")


class BatteryVerdict(enum.Enum):
    ALIVE = "alive"
    ABSENT = "absent"
    CONTRADICTORY = "contradictory"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ProbeSummary:
    """One pid's battery, reduced to the call the scan logic makes."""

    pid: int
    outcomes: tuple[ProbeOutcome, ...]
    verdict: BatteryVerdict


def summarize(pid: int, outcomes: tuple[ProbeOutcome, ...]) -> ProbeSummary:
    exists = any(o.proves_existence for o in outcomes)
    absent = any(o.verdict is Verdict.ABSENT for o in outcomes)
    if exists and absent:
        v = BatteryVerdict.CONTRADICTORY
    elif exists:
        v = BatteryVerdict.ALIVE
    elif absent:
        v = BatteryVerdict.ABSENT
    else:
        v = BatteryVerdict.INCONCLUSIVE
    return ProbeSummary(pid, outcomes, v)


@dataclass(frozen=True)
class ScanConfig:
    """Dials for a scan run. Defaults mirror ordinary hardened usage."""

    families: tuple[Family, ...] = FAMILY_ORDER
    min_pid: int = DEFAULT_MIN_PID
    double_check_rounds: int = DEFAULT_ROUNDS
    worker_count: int = 1
    probe_set: frozenset[ProbeKind] = ALL_PROBES
    budget: int = DEFAULT_BUDGET
    budget_override: bool = False
    run_audits: bool = True
    audits: tuple[str, ...] = AUDIT_CHECKS
    count_check: bool = True
    count_far_factor: int = 10
    include_thread_dirs: bool = False  # sweep /proc/<pid>/task of listed pids too
    audit_dirs: tuple[str, ...] = ()
    dirent_candidates: dict[str, tuple[str, ...]] = field(default_factory=dict)
    mapped_allowlist: tuple[str, ...] = ()
    pid_max_floor: int = 32_768
    latency_samples: int = 64
    latency_factor: float = 10.0
    latency_baseline_ns: float | None = None

    def __post_init__(self) -> None:
        if self.min_pid < 2:
            raise ValueError("min_pid must be >= 2")
        if self.double_check_rounds < 1:
            raise ValueError("double_check_rounds must be >= 1")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if not self.probe_set:
            raise ValueError("probe_set must not be empty")
        unknown = set(self.audits) - set(AUDIT_CHECKS)
        if unknown:
            raise ValueError(f"unknown audit names: {sorted(unknown)}")


def _family_kind_cost(view: SystemView, cfg: ScanConfig, family: Family) -> int:
    """Probe kinds charged per pid for one family's sweep."""
    if family is Family.PROC:
        return len(FS_PROBES & cfg.probe_set)
    if family is Family.SYS:
        return len(SYSCALL_PROBES & cfg.probe_set)
    if family is Family.BRUTE:
        return 1 if view.supports_claims else len(cfg.probe_set)
    return 0  # reverse touches listed pids only; negligible


def notional_probe_count(view: SystemView, cfg: ScanConfig) -> int:
    span = max(0, view.pid_max() - cfg.min_pid + 1)
    per_round = sum(_family_kind_cost(view, cfg, f) for f in cfg.families) * span
    return per_round * cfg.double_check_rounds


def check_budget(view: SystemView, cfg: ScanConfig) -> None:
    cost = notional_probe_count(view, cfg)
    if cost > cfg.budget and not cfg.budget_override:
        raise PidSpaceTooLarge(
            f"sweep would issue ~{cost} probes (budget {cfg.budget}); "
            "pass the budget override to proceed"
        )


# -- sweep plumbing ---------------------------------------------------------------


def _chunks(lo: int, hi: int, n: int) -> list[tuple[int, int]]:
    span = hi - lo + 1
    if span <= 0:
        return []
    n = min(n, span)
    step = span // n
    bounds = []
    start = lo
    for i in range(n):
        end = hi if i == n - 1 else start + step - 1
        bounds.append((start, end))
        start = end + 1
    return bounds


def _parallel_sweep(
    view: SystemView, cfg: ScanConfig, lo: int, hi: int, kinds: frozenset[ProbeKind]
) -> dict[int, tuple[ProbeOutcome, ...]]:
    """Sweep [lo, hi] in worker chunks. Chunk merge order is fixed, so the
    result is identical for any worker count."""
    parts = _chunks(lo, hi, cfg.worker_count)
    if len(parts) <= 1:
        return view.sweep_probes(lo, hi, kinds) if parts else {}
    merged: dict[int, tuple[ProbeOutcome, ...]] = {}
    with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
        for part in pool.map(lambda b: view.sweep_probes(b[0], b[1], kinds), parts):
            merged.update(part)  # disjoint ranges: order-independent
    return merged


def _thread_ids_of(view: SystemView, listed: frozenset[int]) -> frozenset[int]:
    """All task ids enumerable under the listed pids' task directories."""
    tids: set[int] = set()
    for pid in sorted(listed):
        try:
            entries = view.list_dir(f"/proc/{pid}/task")
        except OSError:
            continue
        tids.update(int(e.name) for e in entries if e.name.isdigit())
    return frozenset(tids)


def _sweep_family_round(
    view: SystemView, cfg: ScanConfig, family: Family, kinds: frozenset[ProbeKind]
) -> dict[tuple[str, str], Anomaly]:
    """One round of an unlisted-pid sweep (proc or sys family)."""
    listed = view.list_proc_pids()
    known = listed | _thread_ids_of(view, listed) if cfg.include_thread_dirs else listed
    lo, hi = cfg.min_pid, view.pid_max()
    hits = _parallel_sweep(view, cfg, lo, hi, kinds)
    found: dict[tuple[str, str], Anomaly] = {}
    for pid in sorted(hits):
        if pid in known:
            continue
        summary = summarize(pid, hits[pid])
        if summary.verdict is BatteryVerdict.INCONCLUSIVE:
            continue
        if not cfg.include_thread_dirs and _thread_of_listed(view, pid, listed):
            continue
        evidence = tuple(
            Evidence(
                check=f"{family.value}:{o.kind.value}",
                observed=o.verdict.value,
                expected="no kernel answer for unlisted pid",
            )
            for o in summary.outcomes
            if o.verdict is not Verdict.INCONCLUSIVE
        )
        if family is Family.SYS and summary.verdict is BatteryVerdict.CONTRADICTORY:
            a = Anomaly(AnomalyKind.CONTRADICTORY_PROBES, pid, Confidence.CONFIRMED, evidence)
        elif summary.verdict in (BatteryVerdict.ALIVE, BatteryVerdict.CONTRADICTORY):
            # any existence proof on an unlisted pid is a hidden process
            evidence = evidence + _cmdline_evidence(view, pid)
            a = Anomaly(AnomalyKind.HIDDEN_FROM_LISTING, pid, Confidence.CONFIRMED, evidence)
        else:
            continue
        found[a.key] = a
    return found


def _thread_of_listed(view: SystemView, pid: int, listed: frozenset[int]) -> bool:
    """True when `pid` is a thread of a listed process rather than a process
    of its own.

    Thread ids answer pid-directed syscalls and have stat-able (though
    unlisted) /proc entries, so a sweep would otherwise flag every thread of
    every multithreaded process. A thread names its group leader in the Tgid
    field of its status file; if that leader is listed, the pid is accounted
    for. When the status file is unreadable we keep the finding — an
    answering pid with no readable identity is exactly what a concealed
    process looks like.
    """
    try:
        raw = view.read_proc_file(pid, "status")
    except (OSError, ValueError):
        return False
    for line in raw.decode("utf-8", "replace").splitlines():
        if line.startswith("Tgid:"):
            try:
                tgid = int(line.split(":", 1)[1].strip())
            except ValueError:
                return False
            return tgid != pid and tgid in listed
    return False


def _cmdline_evidence(view: SystemView, pid: int) -> tuple[Evidence, ...]:
    try:
        raw = view.read_proc_file(pid, "cmdline")
    except (FileNotFoundError, PermissionError, ValueError):
        return ()
    text = " ".join(p for p in raw.decode("utf-8", "replace").split("\0") if p)
    return (Evidence("cmdline", text, ""),) if text else ()


def scan_proc(view: SystemView, cfg: ScanConfig) -> list[Anomaly]:
    """Filesystem-probe sweep of unlisted pids under /proc."""
    kinds = FS_PROBES & cfg.probe_set
    if not kinds:
        return []
    rounds = [
        _sweep_family_round(view, cfg, Family.PROC, kinds)
        for _ in range(cfg.double_check_rounds)
    ]
    return _intersect_rounds(rounds)


def scan_sys(view: SystemView, cfg: ScanConfig) -> list[Anomaly]:
    """Syscall-probe sweep of unlisted pids (no filesystem involved)."""
    kinds = SYSCALL_PROBES & cfg.probe_set
    if not kinds:
        return []
    rounds = [
        _sweep_family_round(view, cfg, Family.SYS, kinds)
        for _ in range(cfg.double_check_rounds)
    ]
    return _intersect_rounds(rounds)


def _brute_round(view: SystemView, cfg: ScanConfig) -> dict[tuple[str, str], Anomaly]:
    listed = view.list_proc_pids()
    lo, hi = cfg.min_pid, view.pid_max()
    found: dict[tuple[str, str], Anomaly] = {}
    try:
        in_use = view.claim_sweep(lo, hi)
    except UnsupportedProbe:
        # live downgrade: full probe battery instead of pid claiming
        known = listed | _thread_ids_of(view, listed) if cfg.include_thread_dirs else listed
        hits = _parallel_sweep(view, cfg, lo, hi, cfg.probe_set)
        for pid in sorted(hits):
            if pid in known:
                continue
            summary = summarize(pid, hits[pid])
            if summary.verdict not in (BatteryVerdict.ALIVE, BatteryVerdict.CONTRADICTORY):
                continue
            if cfg.include_thread_dirs or not _thread_of_listed(view, pid, listed):
                evidence = tuple(
                    Evidence(
                        check=f"brute:{o.kind.value}",
                        observed=o.verdict.value,
                        expected="no kernel answer for unlisted pid",
                    )
                    for o in summary.outcomes
                    if o.proves_existence
                ) + _cmdline_evidence(view, pid)
                a = Anomaly(AnomalyKind.HIDDEN_FROM_LISTING, pid, Confidence.CONFIRMED, evidence)
                found[a.key] = a
        return found

    for pid in sorted(in_use - listed):
        if pid < lo or pid > hi:
            continue
        a = Anomaly(
            AnomalyKind.HIDDEN_FROM_LISTING,
            pid,
            Confidence.CONFIRMED,
            (
                Evidence("brute:claim", "pid claim rejected (in use)",
                         "unlisted pid should be claimable"),
            ) + _cmdline_evidence(view, pid),
        )
        found[a.key] = a
    for pid in sorted(listed):
        if pid < lo or pid > hi:
            continue
        if view.claim_pid(pid):
            a = Anomaly(
                AnomalyKind.GHOST_LISTING,
                pid,
                Confidence.CONFIRMED,
                (
                    Evidence("brute:claim", "pid claim succeeded (free)",
                             "listed pid should be in use"),
                ),
            )
            found[a.key] = a
    return found


def scan_brute(view: SystemView, cfg: ScanConfig) -> list[Anomaly]:
    """Claim every pid in the space; claims contradicting the listing are
    findings in both directions (in-use but unlisted, free but listed)."""
    rounds = [_brute_round(view, cfg) for _ in range(cfg.double_check_rounds)]
    return _intersect_rounds(rounds)


def _reverse_round(view: SystemView, cfg: ScanConfig) -> dict[tuple[str, str], Anomaly]:
    listed = view.list_proc_pids()
    found: dict[tuple[str, str], Anomaly] = {}
    for pid in sorted(listed):
        outcomes = view.probe_battery(pid, cfg.probe_set)
        summary = summarize(pid, outcomes)
        if summary.verdict is BatteryVerdict.ABSENT:
            evidence = tuple(
                Evidence(
                    check=f"reverse:{o.kind.value}",
                    observed=o.verdict.value,
                    expected="kernel answer for listed pid",
                )
                for o in outcomes
            )
            a = Anomaly(AnomalyKind.GHOST_LISTING, pid, Confidence.CONFIRMED, evidence)
            found[a.key] = a
        elif summary.verdict is BatteryVerdict.CONTRADICTORY:
            evidence = tuple(
                Evidence(
                    check=f"reverse:{o.kind.value}",
                    observed=o.verdict.value,
                    expected="consistent kernel answers for listed pid",
                )
                for o in outcomes
                if o.verdict is not Verdict.INCONCLUSIVE
            )
            a = Anomaly(AnomalyKind.CONTRADICTORY_PROBES, pid, Confidence.CONFIRMED, evidence)
            found[a.key] = a
    return found


def scan_reverse(view: SystemView, cfg: ScanConfig) -> list[Anomaly]:
    """Ghost check: every listed pid must answer at least one probe."""
    rounds = [_reverse_round(view, cfg) for _ in range(cfg.double_check_rounds)]
    return _intersect_rounds(rounds)


def _intersect_rounds(rounds: list[dict[tuple[str, str], Anomaly]]) -> list[Anomaly]:
    """Keep findings present in *every* round; merge their evidence."""
    if not rounds:
        return []
    keys = set(rounds[0])
    for r in rounds[1:]:
        keys &= set(r)
    merged = []
    for key in sorted(keys):
        a = rounds[0][key]
        for r in rounds[1:]:
            a = merge_anomalies(a, r[key])
        merged.append(a)
    return merged


SCAN_FUNCS = {
    Family.PROC: scan_proc,
    Family.SYS: scan_sys,
    Family.BRUTE: scan_brute,
    Family.REVERSE: scan_reverse,
}


def count_cross_check(view: SystemView, cfg: ScanConfig) -> list[Anomaly]:
    """Listing size against the kernel's global task counter.

    The counter cannot be filtered by listing hooks or pid namespaces, so a
    listing materially smaller than it is evidence of concealment. On live
    systems the counter includes threads: only the impossible direction
    (listing exceeding the counter) is exact there; the deficit direction
    needs the far factor and stays suspicious.
    """
    listing = len(view.list_proc_pids())
    est = view.process_count_estimate()
    tol = view.count_tolerance(est)
    subject = "process-count"
    if listing > est + tol:
        ev = Evidence(
            "count:listing-vs-estimate",
            f"listing {listing}",
            f"at most estimate {est} + tolerance {tol}",
        )
        return [Anomaly(AnomalyKind.PROCESS_COUNT_MISMATCH, subject, Confidence.CONFIRMED, (ev,))]
    deficit = est - listing
    if deficit <= tol:
        return []
    ev = Evidence(
        "count:listing-vs-estimate",
        f"listing {listing}",
        f"estimate {est} (tolerance {tol})",
    )
    if not view.is_live:
        return [Anomaly(AnomalyKind.PROCESS_COUNT_MISMATCH, subject, Confidence.CONFIRMED, (ev,))]
    # live: the estimate counts threads; only a gross deficit is signal
    if est > listing * cfg.count_far_factor:
        return [Anomaly(AnomalyKind.PROCESS_COUNT_MISMATCH, subject, Confidence.SUSPICIOUS, (ev,))]
    return []


def dedup(anomalies: list[Anomaly]) -> tuple[Anomaly, ...]:
    """Merge by (kind, subject): first-seen evidence first, later appended."""
    seen: dict[tuple[str, str], Anomaly] = {}
    for a in anomalies:
        if a.key in seen:
            seen[a.key] = merge_anomalies(seen[a.key], a)
        else:
            seen[a.key] = a
    return tuple(sorted(seen.values(), key=lambda a: (a.kind.value, str(a.subject))))


def full_scan(view: SystemView, cfg: ScanConfig) -> ScanReport:
    """Run the configured families, the count cross-check and (optionally)
    every environment audit; return the merged, deduplicated report."""
    from .audits import run_audits  # late import: audits depend on scan types

    check_budget(view, cfg)
    started = view.clock_ns()
    anomalies: list[Anomaly] = []
    partial: list[str] = []
    checks: list[str] = [f.value for f in cfg.families]

    for family in FAMILY_ORDER:
        if family not in cfg.families:
            continue
        try:
            anomalies.extend(SCAN_FUNCS[family](view, cfg))
        except (ViewUnavailable, OSError) as exc:
            partial.append(f"{family.value}: {exc}")

    if cfg.count_check:
        checks.append("count")
        try:
            anomalies.extend(count_cross_check(view, cfg))
        except (ViewUnavailable, OSError) as exc:
            partial.append(f"count: {exc}")

    if cfg.run_audits:
        audit_anomalies, audit_partial, audit_names = run_audits(view, cfg)
        anomalies.extend(audit_anomalies)
        partial.extend(audit_partial)
        checks.extend(audit_names)

    merged = dedup(anomalies)
    listing_size = len(view.list_proc_pids())
    span = max(0, view.pid_max() - cfg.min_pid + 1)
    sweep_families = sum(
        1 for f in cfg.families if f in (Family.PROC, Family.SYS, Family.BRUTE)
    )
    confirmed = sum(1 for a in merged if a.confidence is Confidence.CONFIRMED)
    counters = Counters(
        pids_listed=listing_size,
        pids_swept=span * sweep_families * cfg.double_check_rounds,
        probes_issued=notional_probe_count(view, cfg),
        confirmed=confirmed,
        suspicious=len(merged) - confirmed,
    )
    header = ReportHeader(
        tool=TOOL_NAME,
        version=__version__,
        scanner_pid=view.self_pid(),
        parent_pid=view.parent_pid(),
        ns=view.self_namespaces(),
        stdout=view.stdout_descriptor(),
        checks=tuple(checks),
        rounds=cfg.double_check_rounds,
        min_pid=cfg.min_pid,
        pid_max=view.pid_max(),
        started_ns=started,
        finished_ns=view.clock_ns(),
    )
    return ScanReport(header, merged, counters, tuple(partial))

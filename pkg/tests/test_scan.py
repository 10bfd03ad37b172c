import pytest

from ghostscan.model import generate_model
from ghostscan.scan import (
    AUDIT_CHECKS,
    BatteryVerdict,
    Family,
    ScanConfig,
    _chunks,
    _intersect_rounds,
    _thread_of_listed,
    check_budget,
    count_cross_check,
    dedup,
    full_scan,
    scan_proc,
    scan_sys,
    summarize,
)
from ghostscan.simview import SimulatedView
from ghostscan.testing import FlickerSpec, TransientView
from ghostscan.transforms import FailProbes, GhostEntry, HideFromListing
from ghostscan.types import (
    Anomaly,
    AnomalyKind,
    Confidence,
    ErrnoClass,
    Evidence,
    PidSpaceTooLarge,
    ProbeKind,
    ProbeOutcome,
    Verdict,
)

from conftest import sim_cfg


def _o(kind, verdict, errno_class=None):
    return ProbeOutcome(kind, verdict, errno_class)


class TestSummarize:
    def test_all_alive(self):
        s = summarize(9, (_o(ProbeKind.STAT, Verdict.ALIVE),))
        assert s.verdict is BatteryVerdict.ALIVE

    def test_denied_proves_existence(self):
        s = summarize(
            9, (_o(ProbeKind.KILL_ZERO, Verdict.DENIED, ErrnoClass.PERMISSION_DENIED),)
        )
        assert s.verdict is BatteryVerdict.ALIVE

    def test_mixed_is_contradictory(self):
        s = summarize(
            9,
            (
                _o(ProbeKind.STAT, Verdict.ABSENT, ErrnoClass.NO_ENTITY),
                _o(ProbeKind.KILL_ZERO, Verdict.ALIVE),
            ),
        )
        assert s.verdict is BatteryVerdict.CONTRADICTORY

    def test_all_absent(self):
        s = summarize(9, (_o(ProbeKind.STAT, Verdict.ABSENT, ErrnoClass.NO_ENTITY),))
        assert s.verdict is BatteryVerdict.ABSENT

    def test_only_inconclusive(self):
        s = summarize(9, (_o(ProbeKind.STAT, Verdict.INCONCLUSIVE, ErrnoClass.OTHER),))
        assert s.verdict is BatteryVerdict.INCONCLUSIVE


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"min_pid": 1},
            {"double_check_rounds": 0},
            {"worker_count": 0},
            {"probe_set": frozenset()},
            {"audits": ("preload", "nonsense")},
        ],
    )
    def test_bad_dials_rejected(self, kwargs):
        with pytest.raises(ValueError):
            ScanConfig(**kwargs)

    def test_audit_names_cover_the_known_set(self):
        ScanConfig(audits=AUDIT_CHECKS)


class TestChunks:
    @pytest.mark.parametrize("lo,hi,n", [(2, 100, 1), (2, 100, 7), (2, 2, 8), (5, 4, 3)])
    def test_partition_properties(self, lo, hi, n):
        parts = _chunks(lo, hi, n)
        if hi < lo:
            assert parts == []
            return
        assert parts[0][0] == lo and parts[-1][1] == hi
        assert len(parts) <= n
        for (a, b), (c, _) in zip(parts, parts[1:]):
            assert a <= b and c == b + 1


class TestBudget:
    def test_default_pid_space_blows_the_budget(self):
        view = SimulatedView(generate_model(seed=1, size=10), ())
        with pytest.raises(PidSpaceTooLarge):
            check_budget(view, ScanConfig())

    def test_override_lets_it_pass(self):
        view = SimulatedView(generate_model(seed=1, size=10), ())
        check_budget(view, ScanConfig(budget_override=True))

    def test_small_pid_space_fits(self):
        view = SimulatedView(generate_model(seed=1, size=10, pid_max=32_768), ())
        check_budget(view, ScanConfig())


def _anom(pid, check="proc:stat", kind=AnomalyKind.HIDDEN_FROM_LISTING):
    return Anomaly(
        kind, pid, Confidence.CONFIRMED, (Evidence(check, "alive", "no answer"),)
    )


class TestIntersectRounds:
    def test_key_must_appear_in_every_round(self):
        a, b = _anom(7), _anom(8)
        merged = _intersect_rounds([{a.key: a, b.key: b}, {a.key: a}])
        assert [m.subject for m in merged] == [7]

    def test_evidence_merges_across_rounds(self):
        first = _anom(7, check="proc:stat")
        second = _anom(7, check="proc:chdir")
        (m,) = _intersect_rounds([{first.key: first}, {second.key: second}])
        assert [e.check for e in m.evidence] == ["proc:stat", "proc:chdir"]

    def test_empty_input(self):
        assert _intersect_rounds([]) == []


class TestDedup:
    def test_merges_same_key_and_sorts(self):
        out = dedup([_anom(9), _anom(3), _anom(9, check="sys:kill0")])
        assert [a.subject for a in out] == [3, 9]
        nine = out[1]
        assert [e.check for e in nine.evidence] == ["proc:stat", "sys:kill0"]


class _CountStub:
    """Just enough view for count_cross_check."""

    def __init__(self, listed: int, estimate: int, tolerance: int, live: bool):
        self._listed = listed
        self._est = estimate
        self._tol = tolerance
        self.is_live = live

    def list_proc_pids(self):
        return frozenset(range(1000, 1000 + self._listed))

    def process_count_estimate(self):
        return self._est

    def count_tolerance(self, estimate):
        return self._tol


class TestCountCrossCheck:
    def test_listing_above_estimate_is_always_confirmed(self):
        for live in (False, True):
            (a,) = count_cross_check(_CountStub(50, 40, 2, live), ScanConfig())
            assert a.confidence is Confidence.CONFIRMED

    def test_sim_deficit_is_confirmed(self):
        (a,) = count_cross_check(_CountStub(40, 50, 2, live=False), ScanConfig())
        assert a.kind is AnomalyKind.PROCESS_COUNT_MISMATCH
        assert a.confidence is Confidence.CONFIRMED

    def test_live_deficit_within_far_factor_is_ignored(self):
        assert count_cross_check(_CountStub(40, 300, 2, live=True), ScanConfig()) == []

    def test_live_gross_deficit_is_suspicious_only(self):
        (a,) = count_cross_check(_CountStub(40, 500, 2, live=True), ScanConfig())
        assert a.confidence is Confidence.SUSPICIOUS

    def test_within_tolerance_is_clean(self):
        assert count_cross_check(_CountStub(50, 51, 2, live=False), ScanConfig()) == []


class _StatusStub:
    """Just enough view for _thread_of_listed."""

    def __init__(self, payload):
        self._payload = payload

    def read_proc_file(self, pid, name):
        assert name == "status"
        if isinstance(self._payload, Exception):
            raise self._payload
        return self._payload


class TestThreadGuard:
    def test_thread_of_listed_leader(self):
        view = _StatusStub(b"Name:\tworker\nTgid:\t100\nPid:\t101\n")
        assert _thread_of_listed(view, 101, frozenset({100}))

    def test_leader_itself_is_not_a_thread(self):
        view = _StatusStub(b"Name:\tleader\nTgid:\t100\nPid:\t100\n")
        assert not _thread_of_listed(view, 100, frozenset({100}))

    def test_unlisted_leader_keeps_the_finding(self):
        view = _StatusStub(b"Name:\tworker\nTgid:\t100\nPid:\t101\n")
        assert not _thread_of_listed(view, 101, frozenset({55}))

    @pytest.mark.parametrize(
        "payload",
        [FileNotFoundError(), PermissionError(), ValueError("not whitelisted"),
         b"Name:\tnoline\n", b"Tgid:\tgarbage\n"],
    )
    def test_unreadable_or_malformed_status_keeps_the_finding(self, payload):
        assert not _thread_of_listed(_StatusStub(payload), 101, frozenset({100}))


class TestSweepFamilies:
    def test_hidden_pid_found_by_both_families(self, model):
        victim = next(p for p in sorted(model.processes) if p not in (1, model.scanner_pid))
        view = SimulatedView(model, (HideFromListing(victim),))
        for scan in (scan_proc, scan_sys):
            (a,) = scan(view, sim_cfg())
            assert a.kind is AnomalyKind.HIDDEN_FROM_LISTING
            assert a.subject == victim
            assert a.confidence is Confidence.CONFIRMED

    def test_clean_view_finds_nothing(self, model, view):
        assert scan_proc(view, sim_cfg()) == []
        assert scan_sys(view, sim_cfg()) == []

    def test_partial_probe_failure_is_contradictory_on_sys(self, model):
        victim = next(p for p in sorted(model.processes) if p not in (1, model.scanner_pid))
        sabotage = FailProbes(victim, frozenset({ProbeKind.KILL_ZERO}))
        view = SimulatedView(model, (HideFromListing(victim), sabotage))
        (a,) = scan_sys(view, sim_cfg())
        assert a.kind is AnomalyKind.CONTRADICTORY_PROBES
        assert a.subject == victim

    def test_worker_count_does_not_change_findings(self, model):
        victim = next(p for p in sorted(model.processes) if p not in (1, model.scanner_pid))
        transforms = (HideFromListing(victim), GhostEntry(31_000))
        one = full_scan(SimulatedView(model, transforms), sim_cfg(worker_count=1))
        eight = full_scan(SimulatedView(model, transforms), sim_cfg(worker_count=8))
        assert one.anomalies == eight.anomalies


class TestFlickerSuppression:
    def test_short_lived_pid_is_not_reported(self, model):
        flicker = FlickerSpec(pid=29_999, alive_epochs=frozenset({1}))
        view = TransientView(SimulatedView(model, ()), (flicker,))
        assert scan_sys(view, sim_cfg(families=(Family.SYS,))) == []

    def test_persistent_hidden_pid_survives_intersection(self, model):
        always = FlickerSpec(pid=29_999, alive_epochs=frozenset(range(1, 50)))
        view = TransientView(SimulatedView(model, ()), (always,))
        (a,) = scan_sys(view, sim_cfg(families=(Family.SYS,)))
        assert a.subject == 29_999

    def test_pid_listed_then_gone_is_not_a_ghost(self, model):
        # a process that exits between the listing and the probes
        flicker = FlickerSpec(
            pid=29_999, alive_epochs=frozenset({1}), listed_epochs=frozenset({1})
        )
        view = TransientView(SimulatedView(model, ()), (flicker,))
        report = full_scan(
            view, sim_cfg(families=(Family.REVERSE,), count_check=False, run_audits=False)
        )
        assert report.anomalies == ()


class TestFullScan:
    def test_clean_report_shape(self, model, view):
        report = full_scan(view, sim_cfg())
        assert report.anomalies == ()
        assert not report.partial
        assert report.header.scanner_pid == model.scanner_pid
        assert "proc" in report.header.checks and "count" in report.header.checks

    def test_family_selection_is_respected(self, model):
        victim = next(p for p in sorted(model.processes) if p not in (1, model.scanner_pid))
        view = SimulatedView(model, (HideFromListing(victim),))
        report = full_scan(
            view, sim_cfg(families=(Family.PROC,), count_check=False, run_audits=False)
        )
        assert [f.value for f in (Family.PROC,)] == list(report.header.checks)
        checks = {e.check.split(":")[0] for a in report.anomalies for e in a.evidence}
        assert "sys" not in checks

    def test_budget_error_propagates(self):
        view = SimulatedView(generate_model(seed=3, size=5), ())
        with pytest.raises(PidSpaceTooLarge):
            full_scan(view, ScanConfig())

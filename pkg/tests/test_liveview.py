import os
import re
import subprocess
import sys

import pytest

from conftest import requires_linux, sim_cfg

pytestmark = requires_linux


@pytest.fixture(scope="module")
def live():
    from ghostscan.liveview import LiveView

    with LiveView() as v:
        yield v


class TestIdentity:
    def test_self_pid_and_parent(self, live):
        assert live.self_pid() == os.getpid()
        assert live.parent_pid() == os.getppid()

    def test_namespaces_match_readlink(self, live):
        ns = live.self_namespaces()
        for name, value in (("pid", ns.pid_ns), ("mnt", ns.mnt_ns), ("user", ns.user_ns)):
            link = os.readlink(f"/proc/self/ns/{name}")
            assert int(re.search(r"\[(\d+)\]", link).group(1)) == value

    def test_environ_is_the_initial_stack_image(self, live):
        env = live.scanner_environ()
        assert any(e.startswith("PATH=") for e in env)

    def test_self_maps_include_the_interpreter(self, live):
        paths = [m.path for m in live.self_maps()]
        assert any("python" in p or p == "[vdso]" for p in paths)

    def test_tracer_state_is_readable(self, live):
        # value is environment-dependent (a sandbox supervisor may attach);
        # only the plumbing is asserted here
        assert live.self_tracer_pid() >= 0
        assert live.self_trace_allowed() in (True, False, None)


class TestListing:
    def test_listing_matches_ambient_proc(self, live):
        ambient = frozenset(int(n) for n in os.listdir("/proc") if n.isdigit())
        listed = live.list_proc_pids()
        assert len(ambient ^ listed) <= 3  # scheduling churn

    def test_list_dir_of_self(self, live):
        names = {e.name for e in live.list_dir(f"/proc/{os.getpid()}")}
        assert {"status", "stat", "cmdline", "task", "ns"} <= names
        kinds = {e.name: e.kind.value for e in live.list_dir(f"/proc/{os.getpid()}")}
        assert kinds["task"] == "directory"
        assert kinds["status"] == "regular"

    def test_count_estimate_covers_listing(self, live):
        assert live.process_count_estimate() >= len(live.list_proc_pids())


class TestProbes:
    def test_battery_on_self_is_all_alive(self, live):
        from ghostscan.scan import BatteryVerdict, summarize
        from ghostscan.types import ALL_PROBES

        me = os.getpid()
        summary = summarize(me, live.probe_battery(me, ALL_PROBES))
        assert summary.verdict is BatteryVerdict.ALIVE

    def test_battery_on_reaped_child_is_absent(self, live):
        from ghostscan.scan import BatteryVerdict, summarize
        from ghostscan.types import ALL_PROBES

        proc = subprocess.Popen([sys.executable, "-c", "pass"])
        pid = proc.pid
        proc.wait()
        summary = summarize(pid, live.probe_battery(pid, ALL_PROBES))
        assert summary.verdict is BatteryVerdict.ABSENT

    def test_sweep_finds_self(self, live):
        from ghostscan.types import ALL_PROBES

        me = os.getpid()
        hits = live.sweep_probes(me - 2, me + 2, ALL_PROBES)
        assert me in hits

    def test_no_claim_channel_live(self, live):
        assert not live.supports_claims


class TestProcFiles:
    def test_status_tgid_is_the_pid(self, live):
        raw = live.read_proc_file(os.getpid(), "status").decode()
        tgid = next(l for l in raw.splitlines() if l.startswith("Tgid:"))
        assert int(tgid.split(":")[1]) == os.getpid()

    def test_ns_files_read_as_link_text(self, live):
        text = live.read_proc_file(os.getpid(), "ns/pid").decode()
        assert re.fullmatch(r"pid:\[\d+\]", text)

    def test_whitelist_is_enforced(self, live):
        with pytest.raises(ValueError):
            live.read_proc_file(os.getpid(), "mem")

    def test_missing_pid_raises_file_not_found(self, live):
        proc = subprocess.Popen([sys.executable, "-c", "pass"])
        pid = proc.pid
        proc.wait()
        with pytest.raises(FileNotFoundError):
            live.read_proc_file(pid, "status")


class TestSystemFacts:
    def test_proc_mount_is_procfs(self, live):
        row = next(m for m in live.mounts() if m.mount_point == "/proc")
        assert row.fs_type == "proc"
        assert row.fs_magic == 0x9FA0
        assert "bind" not in row.flags

    def test_pid_max_both_paths_agree(self, live):
        assert live.pid_max_second_path() == live.pid_max()

    def test_latency_plumbing(self, live):
        assert live.syscall_latency_ns(64) > 0
        baseline = live.latency_baseline_ns()
        assert baseline is None or baseline > 0

    def test_stdout_descriptor_kind(self, live):
        state = live.stdout_descriptor()
        assert state.kind.value in ("terminal", "pipe", "file", "other")

    def test_preload_file_read(self, live):
        raw = live.preload_file()
        assert raw is None or isinstance(raw, bytes)


class TestLiveScan:
    def test_sweep_scan_confirms_nothing_on_a_clean_host(self, live):
        from ghostscan.scan import Family, full_scan
        from ghostscan.types import Confidence

        cfg = sim_cfg(
            families=(Family.PROC, Family.SYS),
            run_audits=False,
            count_check=True,
        )
        report = full_scan(live, cfg)
        confirmed = [a for a in report.anomalies if a.confidence is Confidence.CONFIRMED]
        assert confirmed == [], [(a.kind, a.subject) for a in confirmed]

    def test_full_scan_with_audits_confirms_only_tracer_grade_findings(self, live):
        from ghostscan.scan import full_scan
        from ghostscan.types import AnomalyKind, Confidence

        report = full_scan(live, sim_cfg())
        hard = [
            a
            for a in report.anomalies
            if a.confidence is Confidence.CONFIRMED
            # the sandbox supervisor may attach to us; that is a true positive
            and a.kind is not AnomalyKind.TRACER_PRESENT
        ]
        assert hard == [], [(a.kind, a.subject, a.evidence) for a in hard]

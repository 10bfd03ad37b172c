import string

from hypothesis import given, settings
from hypothesis import strategies as st

from ghostscan.model import generate_model
from ghostscan.report import (
    parse_machine,
    render_machine,
    render_text,
    verify_integrity,
)
from ghostscan.scan import full_scan
from ghostscan.simview import SimulatedView
from ghostscan.transforms import GhostEntry, HideFromListing

from conftest import sim_cfg


def report_with_findings(seed=42, size=60):
    model = generate_model(seed=seed, size=size)
    victims = [p for p in sorted(model.processes) if p not in (1, model.scanner_pid)]
    transforms = (HideFromListing(victims[0]), HideFromListing(victims[1]),
                  GhostEntry(30_001))
    return full_scan(SimulatedView(model, transforms), sim_cfg()), victims[:2]


REPORT, HIDDEN = report_with_findings()
TEXT = render_text(REPORT)
MACHINE = render_machine(REPORT)


class TestTextRendering:
    def test_hidden_pids_get_the_literal_block_head(self):
        for pid in HIDDEN:
            assert f"Found HIDDEN PID: {pid}\n" in TEXT

    def test_other_findings_use_the_generic_line(self):
        assert "Finding: ghost-listing [confirmed] subject: 30001" in TEXT

    def test_counts_line_matches_the_anomalies(self):
        c = REPORT.counters
        assert f"findings: {c.confirmed} confirmed, {c.suspicious} suspicious" in TEXT
        # two hidden pids, one ghost, and the count cross-check seeing 59 != 60
        assert c.confirmed == len(REPORT.confirmed) == 4

    def test_rendering_is_deterministic(self):
        again, _ = report_with_findings()
        assert render_text(again) == TEXT
        assert render_machine(again) == MACHINE

    def test_fresh_text_verifies(self):
        assert verify_integrity(TEXT).ok

    def test_hidden_pids_property(self):
        assert set(REPORT.hidden_pids) == set(HIDDEN)


class TestMachineRendering:
    def test_every_line_is_json(self):
        import json

        for line in MACHINE.splitlines():
            json.loads(line)

    def test_round_trip_is_exact(self):
        assert parse_machine(MACHINE) == REPORT
        assert render_machine(parse_machine(MACHINE)) == MACHINE

    def test_fresh_machine_verifies(self):
        assert verify_integrity(MACHINE).ok


class TestVerifyRejectsEdits:
    def test_deleting_each_hidden_pid_line_fails(self):
        lines = TEXT.splitlines(keepends=True)
        targets = [i for i, l in enumerate(lines) if l.startswith("Found HIDDEN PID: ")]
        assert len(targets) == len(HIDDEN)
        for i in targets:
            mutated = "".join(lines[:i] + lines[i + 1:])
            assert not verify_integrity(mutated).ok

    def test_missing_trailer_fails(self):
        body = TEXT[: TEXT.rindex("integrity: ")]
        res = verify_integrity(body)
        assert not res.ok and "integrity" in res.reason

    def test_truncation_fails(self):
        res = verify_integrity(TEXT[: len(TEXT) // 2] + TEXT[TEXT.rindex("integrity: "):])
        assert not res.ok

    def test_rewritten_finding_same_length_fails(self):
        pid = HIDDEN[0]
        swapped = TEXT.replace(f"Found HIDDEN PID: {pid}", f"Found HIDDEN PID: {pid}"[:-1] + "0", 1)
        assert swapped != TEXT
        res = verify_integrity(swapped)
        assert not res.ok and res.reason == "digest mismatch"

    def test_no_trailing_newline_fails(self):
        assert not verify_integrity(TEXT[:-1]).ok

    def test_garbage_input_fails_cleanly(self):
        for garbage in ("", "\n", "hello\n", "integrity: lines=x bytes=y\n"):
            assert not verify_integrity(garbage).ok


@given(data=st.data())
@settings(max_examples=200, deadline=None)
def test_any_single_edit_breaks_verification(data):
    rendered = data.draw(st.sampled_from((TEXT, MACHINE)))
    body_end = len(rendered) - len(rendered[rendered.rindex("\n", 0, len(rendered) - 1) + 1:])
    op = data.draw(st.sampled_from(("delete-line", "delete-byte", "flip-byte", "insert-byte")))
    raw = rendered.encode()
    if op == "delete-line":
        lines = rendered.splitlines(keepends=True)
        i = data.draw(st.integers(0, len(lines) - 2))  # never the trailer itself
        mutated = "".join(lines[:i] + lines[i + 1:]).encode()
    else:
        pos = data.draw(st.integers(0, body_end - 1))
        if op == "delete-byte":
            mutated = raw[:pos] + raw[pos + 1:]
        elif op == "insert-byte":
            ins = data.draw(st.sampled_from(string.printable)).encode()
            mutated = raw[:pos] + ins + raw[pos:]
        else:
            old = raw[pos:pos + 1]
            new = data.draw(
                st.sampled_from([c for c in string.printable if c.encode() != old])
            ).encode()
            mutated = raw[:pos] + new + raw[pos + 1:]
    if mutated == raw:
        return
    assert not verify_integrity(mutated.decode("utf-8", "surrogateescape")).ok

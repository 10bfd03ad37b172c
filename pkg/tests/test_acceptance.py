"""Acceptance suite: one test per shipped guarantee.

Each test states a user-facing contract of the package and checks it
end to end; run with -v to get one pass/fail line per guarantee.
"""
import os
import random
import string
import subprocess
import sys
import time
import zlib
from dataclasses import replace
from pathlib import Path

import pytest

from ghostscan.model import brute_oracle, generate_model
from ghostscan.report import (
    parse_machine,
    render_machine,
    render_text,
    verify_integrity,
)
from ghostscan.scan import ScanConfig, full_scan
from ghostscan.scenario import (
    build_model,
    build_transforms,
    load_scenario,
    load_suite,
    run_scenario,
)
from ghostscan.simview import SimulatedView
from ghostscan.testing import check_report_soundness
from ghostscan.transforms import HideFromListing
from ghostscan.types import InvalidTransform

from conftest import requires_linux

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def test_attested_scenario_matrix_reproduces_exactly():
    """The six transcript-pinned scenarios (and the rest of the suite) match
    their expected detection matrices cell for cell, in under a minute."""
    started = time.monotonic()
    suite = load_suite(SCENARIOS)
    attested = [sc for sc in suite if sc.name.startswith("attested_")]
    assert len(attested) == 6
    for sc in attested:
        assert any(c.provenance == "attested" for c in sc.expected.values()), sc.name

    failures = []
    for sc in suite:
        result = run_scenario(sc)
        if not result.ok:
            failures.append(f"{sc.name}: {result.matrix_diff()}")
    elapsed = time.monotonic() - started
    assert failures == []
    assert elapsed < 60.0, f"scenario suite took {elapsed:.1f}s"


def test_oracle_equivalence_zero_false_positives():
    """200 seeded random models (1 to 10,000 processes), no evasions: the
    listing equals the ground-truth process table and a full scan stays
    silent."""
    rng = random.Random(2026)
    for i in range(200):
        size = rng.randint(1, 10_000)
        model = generate_model(seed=rng.getrandbits(32), size=size)
        view = SimulatedView(model, ())
        assert view.list_proc_pids() == brute_oracle(model), (i, size)
        report = full_scan(view, ScanConfig(budget_override=True))
        assert report.anomalies == (), (i, size, report.anomalies)


def test_single_transform_completeness():
    """Every single-evasion scenario keeps its detection row over 50 random
    models: the designated checks flag the target every time, and nothing
    else is confirmed."""
    paths = sorted(SCENARIOS.glob("single_*.yaml"))
    assert len(paths) >= 11
    for path in paths:
        sc = load_scenario(path)
        rng = random.Random(zlib.crc32(sc.name.encode()))
        runs = 0
        while runs < 50:
            # sizes stay in system-plausible territory: the namespace row's
            # designation relies on a global task count that dwarfs the
            # boxed-in listing, which toy-sized models legitimately break
            variant = replace(sc, seed=rng.getrandbits(32), size=rng.randint(60, 400))
            model = build_model(variant)
            try:
                transforms = build_transforms(variant, model)
                for t in transforms:
                    t.validate(model)
            except InvalidTransform:
                continue  # e.g. a random model occupying the ghost pid
            result = run_scenario(variant)
            assert result.ok, (
                f"{sc.name} seed={variant.seed} size={variant.size}: "
                f"{result.matrix_diff()}"
            )
            violations = check_report_soundness(result.report, model, transforms)
            assert violations == [], (sc.name, variant.seed, violations)
            runs += 1


def test_scan_determinism_across_worker_counts():
    """Any scenario, run repeatedly with 1 or 8 sweep workers, yields the
    same anomaly multiset and byte-identical machine output."""
    for sc in load_suite(SCENARIOS):
        renders = []
        multisets = []
        for workers in (1, 8, 1, 8):
            result = run_scenario(sc, worker_count=workers)
            renders.append(render_machine(result.report))
            multisets.append(sorted(
                (a.kind.value, str(a.subject), a.confidence.value)
                for a in result.report.anomalies
            ))
        assert len(set(renders)) == 1, sc.name
        assert all(m == multisets[0] for m in multisets), sc.name


def _mutate_once(rng: random.Random, raw: bytes, body_end: int) -> bytes:
    op = rng.choice(("delete-line", "delete-byte", "insert-byte", "change-byte"))
    if op == "delete-line":
        bounds = []
        start = 0
        while start < body_end:
            end = raw.index(b"\n", start, body_end) + 1
            bounds.append((start, end))
            start = end
        lo, hi = rng.choice(bounds)
        return raw[:lo] + raw[hi:]
    pos = rng.randrange(body_end)
    if op == "delete-byte":
        return raw[:pos] + raw[pos + 1:]
    if op == "insert-byte":
        ins = rng.choice(string.printable).encode()
        return raw[:pos] + ins + raw[pos:]
    old = raw[pos:pos + 1]
    new = rng.choice([c for c in string.printable if c.encode() != old]).encode()
    return raw[:pos] + new + raw[pos + 1:]


def test_report_integrity_catches_every_edit():
    """Deleting any hidden-pid line breaks verification, and so do 1,000
    random single-edit mutations of the report body (text and machine)."""
    model = generate_model(seed=97, size=80)
    victims = [
        p for p in sorted(model.processes)
        if p not in (1, model.scanner_pid) and p > 301  # above the sweep floor
    ]
    transforms = tuple(HideFromListing(v) for v in victims[:3])
    report = full_scan(SimulatedView(model, transforms), ScanConfig(budget_override=True))
    text = render_text(report)
    machine = render_machine(report)
    assert verify_integrity(text).ok and verify_integrity(machine).ok

    lines = text.splitlines(keepends=True)
    hidden_lines = [i for i, l in enumerate(lines) if l.startswith("Found HIDDEN PID: ")]
    assert len(hidden_lines) == 3
    for i in hidden_lines:
        mutated = "".join(lines[:i] + lines[i + 1:])
        assert not verify_integrity(mutated).ok, f"deleting line {i} went unnoticed"

    rng = random.Random(0x7A3B)
    for n in range(1_000):
        rendered = text if n % 2 == 0 else machine
        raw = rendered.encode()
        body_end = raw.rindex(b"\n", 0, len(raw) - 1) + 1
        mutated = _mutate_once(rng, raw, body_end)
        if mutated == raw:
            continue
        result = verify_integrity(mutated.decode("utf-8", "surrogateescape"))
        assert not result.ok, f"mutation {n} went unnoticed"


@requires_linux
def test_inspection_helper_is_statically_linked():
    """The compiled inspection helper carries no dynamic-loader surface: no
    program interpreter, no dynamic section."""
    from ghostscan.native import build_helper, elf_dynamic_surface

    binary = build_helper()
    surface = elf_dynamic_surface(binary)
    assert surface == {"pt_interp": False, "pt_dynamic": False}


@requires_linux
def test_live_integration_detects_preload_hidden_process():
    """End to end on this machine: a sleeper hidden from libc-based tools by
    the preload fixture is missed by ps but named by the scan, which exits 1;
    with the hiding variables unset the same scan exits 0. Under 5 minutes."""
    started = time.monotonic()
    fixture_dir = ROOT / "fixture"
    build = subprocess.run(
        ["make", "-s", "-C", str(fixture_dir)], capture_output=True, text=True
    )
    assert build.returncode == 0, build.stderr
    shim = fixture_dir / "libununhide.so"
    assert shim.exists()

    sleepers = []
    try:
        sleeper = subprocess.Popen(["sleep", "600"])
        sleepers.append(sleeper)
        while sleeper.pid <= 300:  # the shim refuses to hide low pids
            sleeper = subprocess.Popen(["sleep", "600"])
            sleepers.append(sleeper)
        pid = sleeper.pid

        hiding = {**os.environ, "LD_PRELOAD": str(shim), "UNUNHIDE_PID": str(pid)}

        def ps_pids(env):
            out = subprocess.run(
                ["ps", "-e", "-o", "pid="], env=env, capture_output=True,
                text=True, check=True, timeout=60,
            ).stdout
            return {int(tok) for tok in out.split()}

        assert pid in ps_pids(os.environ), "control: ps must see the sleeper"
        assert pid not in ps_pids(hiding), "preloaded ps still listed the sleeper"

        scan_cmd = [
            sys.executable, "-m", "ghostscan", "scan",
            "--checks", "proc,sys", "--budget-override", "--output", "machine",
        ]
        hidden_scan = subprocess.run(
            scan_cmd, env=hiding, capture_output=True, text=True, timeout=240
        )
        assert hidden_scan.returncode == 1, hidden_scan.stderr
        report = parse_machine(hidden_scan.stdout)
        assert pid in report.hidden_pids, report.anomalies

        benign = {**os.environ, "LD_PRELOAD": str(shim)}  # vars unset: inert
        benign.pop("UNUNHIDE_PID", None)
        benign.pop("UNUNHIDE_HIDE", None)
        clean_scan = subprocess.run(
            scan_cmd, env=benign, capture_output=True, text=True, timeout=240
        )
        assert clean_scan.returncode == 0, (
            clean_scan.stderr or parse_machine(clean_scan.stdout).anomalies
        )
    finally:
        for s in sleepers:
            s.kill()
            s.wait()
    assert time.monotonic() - started < 300

"""Declarative scenarios: a model, a transform stack, and an expected matrix.

A scenario file is one YAML document describing the world (seeded base model
plus explicit extras), the lies told about it (transforms), and the expected
detection-matrix row: for each scan family and audit, whether it detects the
target, yields only suspicious findings, or is blind. Cells carry a
provenance label — `attested` for outcomes pinned by the upstream experiment
transcripts this suite reproduces, `derived` for outcomes that follow from
the model arithmetic — so a matrix diff shows exactly which kind of claim
broke.

The runner applies output-filter transforms to the *rendered report text*
(never to view data), then checks the integrity trailer against the filtered
text; the `integrity` column records whether tampering was caught.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .model import (
    DEFAULT_ENV,
    DEFAULT_SCANNER_MAPS,
    SystemModel,
    ensure_process,
    generate_model,
)
from .report import ScanReport, VerifyResult, render_text, verify_integrity
from .scan import ScanConfig, full_scan
from .simview import SimulatedView
from .transforms import (
    BindMountProc,
    EnvStrip,
    FailProbes,
    FakeTracerPid,
    GhostEntry,
    HideFromListing,
    OutputFilter,
    PidMaxTruncated,
    PidNamespaceSwap,
    TamperGetdents,
    Transform,
    VforkClaim,
    output_filters,
)
from .types import (
    ALL_PROBES,
    FS_PROBES,
    SYSCALL_PROBES,
    Anomaly,
    AnomalyKind,
    Confidence,
    DescriptorKind,
    DescriptorState,
    DirEntry,
    FileKind,
    MappedObject,
    ProbeKind,
    ScenarioError,
)

COLUMNS = (
    "proc", "sys", "brute", "reverse", "count",
    "preload", "namespaces", "proc-mount", "pid-max",
    "tracer", "output", "dirents", "integrity",
)

_FAMILY_COLUMNS = ("proc", "sys", "brute", "reverse")
_FAMILY_KINDS = frozenset(
    {AnomalyKind.HIDDEN_FROM_LISTING, AnomalyKind.GHOST_LISTING,
     AnomalyKind.CONTRADICTORY_PROBES}
)
_AUDIT_COLUMN_KINDS: dict[str, frozenset[AnomalyKind]] = {
    "count": frozenset({AnomalyKind.PROCESS_COUNT_MISMATCH}),
    "preload": frozenset({AnomalyKind.PRELOAD_ENV_ACTIVE, AnomalyKind.PRELOAD_FILE_ACTIVE,
                          AnomalyKind.UNEXPECTED_MAPPED_OBJECT}),
    "namespaces": frozenset({AnomalyKind.NAMESPACE_MISMATCH}),
    "proc-mount": frozenset({AnomalyKind.PROC_MOUNT_SUSPICIOUS}),
    "pid-max": frozenset({AnomalyKind.PID_MAX_SUSPICIOUS}),
    "tracer": frozenset({AnomalyKind.TRACER_PRESENT, AnomalyKind.SYSCALL_LATENCY_OUTLIER}),
    "output": frozenset({AnomalyKind.OUTPUT_NOT_TERMINAL}),
    "dirents": frozenset({AnomalyKind.HIDDEN_DIRENT}),
}


class CellOutcome(enum.Enum):
    DETECTS = "detects"
    SUSPICIOUS_ONLY = "suspicious-only"
    BLIND = "blind"


@dataclass(frozen=True)
class Cell:
    outcome: CellOutcome
    provenance: str = "derived"  # "attested" for transcript-pinned cells


MatrixRow = dict[str, Cell]


def blind_row() -> MatrixRow:
    return {c: Cell(CellOutcome.BLIND) for c in COLUMNS}


_PROBE_GROUPS = {
    "all": ALL_PROBES,
    "fs": FS_PROBES,
    "syscall": SYSCALL_PROBES,
}


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str = ""
    seed: int = 1
    size: int = 120
    pid_max: int | None = None
    target: int | None = None
    extra_processes: tuple[dict, ...] = ()
    env_extra: tuple[str, ...] = ()
    scanner_maps_extra: tuple[str, ...] = ()
    preload_file: str | None = None
    tracer_pid: int | None = None
    directories: dict[str, tuple[str, ...]] = field(default_factory=dict)
    stdout: str = "terminal"
    transforms: tuple[dict, ...] = ()
    audit_dirs: tuple[str, ...] = ()
    candidates: dict[str, tuple[str, ...]] = field(default_factory=dict)
    min_pid: int = 301
    rounds: int = 2
    expected: MatrixRow = field(default_factory=blind_row)


def _parse_cell(raw: str) -> Cell:
    value, _, prov = str(raw).partition("/")
    try:
        outcome = CellOutcome(value.strip())
    except ValueError as exc:
        raise ScenarioError(f"unknown cell outcome {value!r}") from exc
    prov = prov.strip() or "derived"
    if prov not in ("derived", "attested"):
        raise ScenarioError(f"unknown cell provenance {prov!r}")
    return Cell(outcome, prov)


def parse_scenario(text: str, name_hint: str = "") -> Scenario:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    known = {
        "name", "description", "seed", "size", "pid_max", "target",
        "extra_processes", "env_extra", "scanner_maps_extra", "preload_file",
        "tracer_pid", "directories", "stdout", "transforms", "audit_dirs",
        "candidates", "min_pid", "rounds", "expected",
    }
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    expected = blind_row()
    for col, raw in (doc.get("expected") or {}).items():
        if col not in COLUMNS:
            raise ScenarioError(f"unknown matrix column {col!r}")
        expected[col] = _parse_cell(raw)
    return Scenario(
        name=doc.get("name", name_hint),
        description=doc.get("description", ""),
        seed=int(doc.get("seed", 1)),
        size=int(doc.get("size", 120)),
        pid_max=doc.get("pid_max"),
        target=doc.get("target"),
        extra_processes=tuple(doc.get("extra_processes") or ()),
        env_extra=tuple(doc.get("env_extra") or ()),
        scanner_maps_extra=tuple(doc.get("scanner_maps_extra") or ()),
        preload_file=doc.get("preload_file"),
        tracer_pid=doc.get("tracer_pid"),
        directories={
            str(p): tuple(names) for p, names in (doc.get("directories") or {}).items()
        },
        stdout=doc.get("stdout", "terminal"),
        transforms=tuple(doc.get("transforms") or ()),
        audit_dirs=tuple(doc.get("audit_dirs") or ()),
        candidates={
            str(p): tuple(names) for p, names in (doc.get("candidates") or {}).items()
        },
        min_pid=int(doc.get("min_pid", 301)),
        rounds=int(doc.get("rounds", 2)),
        expected=expected,
    )


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(), name_hint=p.stem)


def load_suite(directory: str | Path) -> list[Scenario]:
    paths = sorted(Path(directory).glob("*.yaml"))
    if not paths:
        raise ScenarioError(f"no scenario files under {directory}")
    return [load_scenario(p) for p in paths]


# -- model & transform construction ---------------------------------------------


def _dir_entries(names: tuple[str, ...]) -> tuple[DirEntry, ...]:
    entries = []
    for i, raw in enumerate(sorted(names)):
        if raw.endswith("/"):
            entries.append(DirEntry(raw[:-1], 50_000 + i, FileKind.DIRECTORY))
        else:
            entries.append(DirEntry(raw, 50_000 + i, FileKind.REGULAR))
    return tuple(entries)


def build_model(sc: Scenario) -> SystemModel:
    kwargs = {}
    if sc.pid_max is not None:
        kwargs["pid_max"] = int(sc.pid_max)
    model = generate_model(sc.seed, sc.size, **kwargs)
    for proc in sc.extra_processes:
        model = ensure_process(
            model, int(proc["pid"]), comm=proc.get("comm", "sleep"),
            ppid=int(proc.get("ppid", 1)),
        )
    # after the extras, so an extra entry naming the target keeps its comm
    if sc.target is not None:
        model = ensure_process(model, int(sc.target))
    if sc.tracer_pid is not None:
        model = ensure_process(model, int(sc.tracer_pid), comm="tracer")
        tracers = dict(model.tracers)
        tracers[model.scanner_pid] = int(sc.tracer_pid)
        model = replace(model, tracers=tracers)
    if sc.env_extra:
        model = replace(model, env_of_scanner=DEFAULT_ENV + sc.env_extra)
    if sc.scanner_maps_extra:
        model = replace(
            model,
            scanner_maps=DEFAULT_SCANNER_MAPS
            + tuple(MappedObject(p, "r-xp") for p in sc.scanner_maps_extra),
        )
    if sc.preload_file is not None:
        model = replace(model, preload_file=sc.preload_file.encode())
    if sc.directories:
        model = replace(
            model,
            directories={p: _dir_entries(names) for p, names in sc.directories.items()},
        )
    stdout_map = {
        "terminal": DescriptorState(DescriptorKind.TERMINAL, "/dev/pts/9"),
        "pipe": DescriptorState(DescriptorKind.PIPE, "pipe:[43046]"),
        "file": DescriptorState(DescriptorKind.FILE, "/tmp/scan.out"),
    }
    if sc.stdout not in stdout_map:
        raise ScenarioError(f"unknown stdout kind {sc.stdout!r}")
    model = replace(model, scanner_stdout=stdout_map[sc.stdout])
    return model


def _parse_probes(raw) -> frozenset[ProbeKind]:
    if raw is None:
        return ALL_PROBES
    if isinstance(raw, str):
        if raw not in _PROBE_GROUPS:
            raise ScenarioError(f"unknown probe group {raw!r}")
        return _PROBE_GROUPS[raw]
    return frozenset(ProbeKind(v) for v in raw)


def build_transforms(sc: Scenario, model: SystemModel) -> tuple[Transform, ...]:
    out: list[Transform] = []
    for t in sc.transforms:
        kind = t.get("kind")
        if kind == "hide_from_listing":
            out.append(HideFromListing(int(t["pid"])))
        elif kind == "fail_probes":
            out.append(FailProbes(int(t["pid"]), _parse_probes(t.get("probes"))))
        elif kind == "vfork_claim":
            out.append(VforkClaim(int(t["pid"])))
        elif kind == "ghost_entry":
            out.append(GhostEntry(int(t["pid"])))
        elif kind == "pid_max_truncated":
            out.append(PidMaxTruncated(int(t["value"])))
        elif kind == "bind_mount_proc":
            out.append(BindMountProc(int(t["pid"])))
        elif kind == "pid_namespace_swap":
            vis = t.get("visible", "scanner")
            if vis == "scanner":
                visible = frozenset({model.scanner_pid})
            else:
                visible = frozenset(int(p) for p in vis) | {model.scanner_pid}
            out.append(PidNamespaceSwap(visible))
        elif kind == "env_strip":
            out.append(EnvStrip(str(t["var"])))
        elif kind == "output_filter":
            out.append(OutputFilter(str(t["pattern"])))
        elif kind == "tamper_getdents":
            out.append(TamperGetdents(str(t["path"]), str(t["name"])))
        elif kind == "fake_tracer_pid":
            out.append(FakeTracerPid(int(t["value"])))
        else:
            raise ScenarioError(f"unknown transform kind {kind!r}")
    return tuple(out)


# -- running & attribution ---------------------------------------------------------


def _family_cell(anomalies: tuple[Anomaly, ...], family: str, target: int | None) -> Cell:
    prefix = f"{family}:"
    best: CellOutcome = CellOutcome.BLIND
    for a in anomalies:
        if a.kind not in _FAMILY_KINDS:
            continue
        if target is not None and a.subject != target:
            continue
        if not any(e.check.startswith(prefix) for e in a.evidence):
            continue
        if a.confidence is Confidence.CONFIRMED:
            return Cell(CellOutcome.DETECTS)
        best = CellOutcome.SUSPICIOUS_ONLY
    return Cell(best)


def _audit_cell(anomalies: tuple[Anomaly, ...], column: str) -> Cell:
    kinds = _AUDIT_COLUMN_KINDS[column]
    best: CellOutcome = CellOutcome.BLIND
    for a in anomalies:
        if a.kind not in kinds:
            continue
        if a.confidence is Confidence.CONFIRMED:
            return Cell(CellOutcome.DETECTS)
        best = CellOutcome.SUSPICIOUS_ONLY
    return Cell(best)


def observed_row(report: ScanReport, verify: VerifyResult, target: int | None) -> MatrixRow:
    row: MatrixRow = {}
    for fam in _FAMILY_COLUMNS:
        row[fam] = _family_cell(report.anomalies, fam, target)
    for col in _AUDIT_COLUMN_KINDS:
        row[col] = _audit_cell(report.anomalies, col)
    row["integrity"] = Cell(CellOutcome.BLIND if verify.ok else CellOutcome.DETECTS)
    return row


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    report: ScanReport
    text: str
    filtered_text: str
    verify: VerifyResult
    observed: MatrixRow
    ok: bool
    diffs: tuple[str, ...]

    def matrix_diff(self) -> str:
        return "; ".join(self.diffs) if self.diffs else "match"


def scan_config_for(sc: Scenario, worker_count: int = 1) -> ScanConfig:
    return ScanConfig(
        min_pid=sc.min_pid,
        double_check_rounds=sc.rounds,
        worker_count=worker_count,
        budget_override=True,  # simulated sweeps cost nothing real
        run_audits=True,
        audit_dirs=sc.audit_dirs,
        dirent_candidates=dict(sc.candidates),
    )


def run_scenario(sc: Scenario, worker_count: int = 1) -> ScenarioResult:
    model = build_model(sc)
    transforms = build_transforms(sc, model)
    view = SimulatedView(model, transforms)
    report = full_scan(view, scan_config_for(sc, worker_count))
    text = render_text(report)
    filtered = text
    for f in output_filters(transforms):
        filtered = f.apply_to_text(filtered)
    verify = verify_integrity(filtered)
    observed = observed_row(report, verify, sc.target)
    diffs = tuple(
        f"{col}: expected {sc.expected[col].outcome.value}, got {observed[col].outcome.value}"
        for col in COLUMNS
        if observed[col].outcome is not sc.expected[col].outcome
    )
    return ScenarioResult(
        scenario=sc,
        report=report,
        text=text,
        filtered_text=filtered,
        verify=verify,
        observed=observed,
        ok=not diffs,
        diffs=diffs,
    )


def format_matrix(results: list[ScenarioResult]) -> str:
    """Render suite results as a fixed-width matrix table."""
    short = {"detects": "DET", "suspicious-only": "SUS", "blind": "-"}
    name_w = max(len(r.scenario.name) for r in results) + 2
    buf = io.StringIO()
    buf.write("".ljust(name_w) + " ".join(c[:7].rjust(7) for c in COLUMNS) + "  result\n")
    for r in results:
        cells = " ".join(short[r.observed[c].outcome.value].rjust(7) for c in COLUMNS)
        buf.write(r.scenario.name.ljust(name_w) + cells)
        buf.write("  ok\n" if r.ok else f"  MISMATCH ({r.matrix_diff()})\n")
    return buf.getvalue()

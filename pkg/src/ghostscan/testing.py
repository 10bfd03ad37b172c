"""Test instrumentation: transient processes, channel snapshots, soundness.

Nothing here is used by the scanner itself. The utilities exist so the test
suite (and anyone extending it) can state three classes of properties
directly:

* races — `TransientView` injects pids that exist only during chosen epochs,
  to prove the double-check intersection suppresses one-epoch flickers while
  keeping persistent findings;
* locality — `snapshot_channels` captures every observable channel of a view
  so a test can assert a transform changed only the channels it declares;
* soundness — `ground_truth` and `check_report_soundness` derive, from a
  model and its transform stack, which confirmed findings are justified, so
  randomized tests can reject both false convictions and missed targets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .model import SystemModel
from .report import ScanReport
from .transforms import (
    CH_CLAIMS,
    CH_ENV,
    CH_FILES,
    CH_IDENTITY,
    CH_LISTING,
    CH_MOUNTS,
    CH_NAMESPACES,
    CH_OUTPUT,
    CH_PID_MAX,
    CH_PROC_TREE,
    CH_TRACER,
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
    ch_dirents,
    ch_probe,
)
from .types import (
    AnomalyKind,
    Confidence,
    DescriptorState,
    DirEntry,
    ErrnoClass,
    MappedObject,
    MountEntry,
    NamespaceIds,
    ProbeKind,
    ProbeOutcome,
    Verdict,
)
from .view import SystemView

# -- transient processes ------------------------------------------------------------

_T_ALIVE = {k: ProbeOutcome(k, Verdict.ALIVE) for k in ProbeKind}
_T_ABSENT = {k: ProbeOutcome(k, Verdict.ABSENT, ErrnoClass.NO_ENTITY) for k in ProbeKind}


@dataclass(frozen=True)
class FlickerSpec:
    """A pid that exists only during certain epochs.

    An epoch is one `list_proc_pids` call on the wrapping view: each scan
    round starts by listing, so with a single scan family enabled, epoch N is
    round N. `alive_epochs` controls probes and claims; `listed_epochs`
    controls the listing. A process that spawns after the listing was taken
    and dies before the next round is `alive_epochs={1}, listed_epochs=()`.
    """

    pid: int
    alive_epochs: frozenset[int] = frozenset()
    listed_epochs: frozenset[int] = frozenset()


class TransientView(SystemView):
    """Wrap a view and overlay short-lived pids.

    Flicker pids must not exist in the inner view; everything else delegates
    unchanged. Built for race tests that enable one scan family at a time —
    audits and counters advance epochs too, so multi-family epoch numbering
    is not meaningful.
    """

    def __init__(self, inner: SystemView, flickers: tuple[FlickerSpec, ...]):
        inner_pids = inner.list_proc_pids()
        for spec in flickers:
            if spec.pid in inner_pids:
                raise ValueError(f"flicker pid {spec.pid} already exists in the view")
        self._inner = inner
        self._flickers = {s.pid: s for s in flickers}
        self._epoch = 0
        self.is_live = inner.is_live

    @property
    def epoch(self) -> int:
        return self._epoch

    def _alive_now(self, pid: int) -> bool:
        spec = self._flickers.get(pid)
        return spec is not None and self._epoch in spec.alive_epochs

    # enumeration: advances the epoch
    def list_proc_pids(self) -> frozenset[int]:
        self._epoch += 1
        base = self._inner.list_proc_pids()
        extra = {
            s.pid for s in self._flickers.values() if self._epoch in s.listed_epochs
        }
        return base | frozenset(extra)

    # probes and claims consult the flicker table first
    def probe_pid(self, pid: int, kind: ProbeKind) -> ProbeOutcome:
        if pid in self._flickers:
            return _T_ALIVE[kind] if self._alive_now(pid) else _T_ABSENT[kind]
        return self._inner.probe_pid(pid, kind)

    def sweep_probes(self, lo, hi, kinds):
        hits = dict(self._inner.sweep_probes(lo, hi, kinds))
        ordered = sorted(kinds, key=lambda k: k.value)
        for pid, spec in self._flickers.items():
            if lo <= pid <= hi and self._alive_now(pid):
                hits[pid] = tuple(_T_ALIVE[k] for k in ordered)
        return hits

    def claim_pid(self, pid: int) -> bool:
        if pid in self._flickers:
            return not self._alive_now(pid)
        return self._inner.claim_pid(pid)

    def claim_sweep(self, lo: int, hi: int) -> frozenset[int]:
        base = self._inner.claim_sweep(lo, hi)
        extra = {
            pid for pid in self._flickers if lo <= pid <= hi and self._alive_now(pid)
        }
        return base | frozenset(extra)

    @property
    def supports_claims(self) -> bool:
        return self._inner.supports_claims

    def read_proc_file(self, pid: int, name: str) -> bytes:
        if pid in self._flickers:
            raise FileNotFoundError(f"/proc/{pid}/{name}")  # gone before the read
        return self._inner.read_proc_file(pid, name)

    # everything else is a straight delegation
    def list_dir(self, path: str) -> tuple[DirEntry, ...]:
        return self._inner.list_dir(path)

    def dir_nlink(self, path: str) -> int:
        return self._inner.dir_nlink(path)

    def entry_exists(self, path: str, name: str) -> bool:
        return self._inner.entry_exists(path, name)

    def mounts(self) -> tuple[MountEntry, ...]:
        return self._inner.mounts()

    def pid_max(self) -> int:
        return self._inner.pid_max()

    def pid_max_second_path(self) -> int | None:
        return self._inner.pid_max_second_path()

    def process_count_estimate(self) -> int:
        return self._inner.process_count_estimate()

    def count_tolerance(self, estimate: int) -> int:
        return self._inner.count_tolerance(estimate)

    def self_pid(self) -> int:
        return self._inner.self_pid()

    def parent_pid(self) -> int:
        return self._inner.parent_pid()

    def self_namespaces(self) -> NamespaceIds:
        return self._inner.self_namespaces()

    def scanner_environ(self) -> tuple[str, ...]:
        return self._inner.scanner_environ()

    def self_maps(self) -> tuple[MappedObject, ...]:
        return self._inner.self_maps()

    def preload_file(self) -> bytes | None:
        return self._inner.preload_file()

    def self_tracer_pid(self) -> int:
        return self._inner.self_tracer_pid()

    def self_trace_allowed(self) -> bool | None:
        return self._inner.self_trace_allowed()

    def syscall_latency_ns(self, samples: int = 64) -> float:
        return self._inner.syscall_latency_ns(samples)

    def latency_baseline_ns(self) -> float | None:
        return self._inner.latency_baseline_ns()

    def stdout_descriptor(self) -> DescriptorState:
        return self._inner.stdout_descriptor()

    def clock_ns(self) -> int:
        return self._inner.clock_ns()


# -- channel snapshots -------------------------------------------------------------

#: Which declared channels can explain a change at each snapshot key.
#: A locality test fails when a snapshot key differs and *none* of its
#: explaining channels appear in the transform's declaration.
_PROC_FILE_SAMPLE = ("status", "stat", "cmdline", "environ")


def _probe_sig(view: SystemView, pid: int, kind: ProbeKind):
    o = view.probe_pid(pid, kind)
    return (o.verdict.value, o.errno_class.value if o.errno_class else None)


def _file_sig(view: SystemView, pid: int, name: str):
    try:
        return view.read_proc_file(pid, name)
    except (FileNotFoundError, PermissionError, ValueError) as exc:
        return f"<{exc.__class__.__name__}>"


def snapshot_channels(
    view: SystemView,
    sample_pids: tuple[int, ...],
    dirent_paths: tuple[str, ...] = (),
    claim_range: tuple[int, int] = (2, 0),
) -> dict[str, object]:
    """Capture every observable channel of a view, keyed by snapshot name.

    The listing is captured WITHOUT calling list_proc_pids more than once so
    the snapshot works on transient views too. `claim_range` defaults to the
    span covering the sample pids.
    """
    pids = tuple(sorted(set(sample_pids)))
    lo, hi = claim_range
    if hi < lo:
        lo, hi = (min(pids, default=2), max(pids, default=2))
    snap: dict[str, object] = {}
    snap["listing"] = view.list_proc_pids()
    for kind in ProbeKind:
        snap[f"probe:{kind.value}"] = tuple(_probe_sig(view, p, kind) for p in pids)
    try:
        claims = (
            tuple(view.claim_pid(p) for p in pids),
            tuple(sorted(view.claim_sweep(lo, hi))),
        )
    except Exception as exc:  # claim channel genuinely unavailable
        claims = f"<{exc.__class__.__name__}>"
    snap["claims"] = claims
    self_pid = view.self_pid()
    snap["files:scanner"] = {
        name: _file_sig(view, self_pid, name) for name in _PROC_FILE_SAMPLE
    }
    snap["files:other"] = {
        (p, name): _file_sig(view, p, name)
        for p in pids
        if p != self_pid
        for name in _PROC_FILE_SAMPLE
    }
    snap["pid1-ns"] = tuple(
        _file_sig(view, 1, name) for name in ("ns/pid", "ns/mnt", "ns/user")
    )
    snap["env"] = view.scanner_environ()
    snap["mounts"] = view.mounts()
    snap["pid-max"] = (view.pid_max(), view.pid_max_second_path())
    snap["self-ns"] = view.self_namespaces()
    snap["identity"] = (view.self_pid(), view.parent_pid())
    snap["tracer"] = (view.self_tracer_pid(), view.self_trace_allowed())
    snap["stdout"] = view.stdout_descriptor()
    snap["maps"] = view.self_maps()
    snap["preload-file"] = view.preload_file()
    snap["proc-dirents"] = tuple(
        sorted(view.list_dir("/proc"), key=lambda e: e.name)
    )
    for path in dirent_paths:
        entries = tuple(sorted(view.list_dir(path), key=lambda e: e.name))
        snap[f"dirents:{path}"] = (entries, view.dir_nlink(path))
    return snap


def _explaining_channels(key: str, dirent_paths: tuple[str, ...]) -> frozenset[str]:
    if key == "listing":
        return frozenset({CH_LISTING})
    if key.startswith("probe:"):
        return frozenset({ch_probe(ProbeKind(key.split(":", 1)[1]))})
    if key == "claims":
        # a namespace swap renumbers the claimable set as a side effect
        return frozenset({CH_CLAIMS})
    if key == "files:other":
        return frozenset({CH_FILES, CH_PROC_TREE})
    if key == "files:scanner":
        # the scanner's own environ/status files serialize those channels
        return frozenset({CH_FILES, CH_PROC_TREE, CH_ENV, CH_TRACER})
    if key == "pid1-ns":
        return frozenset({CH_NAMESPACES, CH_FILES, CH_PROC_TREE})
    if key == "env":
        return frozenset({CH_ENV})
    if key == "mounts":
        return frozenset({CH_MOUNTS})
    if key == "pid-max":
        return frozenset({CH_PID_MAX})
    if key == "self-ns":
        return frozenset({CH_NAMESPACES})
    if key == "identity":
        return frozenset({CH_IDENTITY})
    if key == "tracer":
        return frozenset({CH_TRACER})
    if key == "stdout":
        return frozenset({CH_OUTPUT})
    if key in ("maps", "preload-file"):
        return frozenset()  # no transform may touch these
    if key == "proc-dirents":
        return frozenset({CH_LISTING, CH_PROC_TREE})
    if key.startswith("dirents:"):
        return frozenset({ch_dirents(key.split(":", 1)[1])})
    raise KeyError(key)


def unexplained_diffs(
    clean: dict[str, object],
    transformed: dict[str, object],
    declared: frozenset[str],
    dirent_paths: tuple[str, ...] = (),
) -> list[str]:
    """Snapshot keys that changed without any declared channel explaining it."""
    bad = []
    for key in clean:
        if clean[key] == transformed[key]:
            continue
        if not (_explaining_channels(key, dirent_paths) & declared):
            bad.append(key)
    return sorted(bad)


# -- soundness ---------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    """What a transform stack actually did, derived independently of any scan."""

    hidden_pids: frozenset[int] = frozenset()       # real pids the listing omits
    ghost_pids: frozenset[int] = frozenset()        # listed pids that do not exist
    probe_sabotaged: frozenset[int] = frozenset()   # real pids whose probes lie
    claim_sabotaged: frozenset[int] = frozenset()   # real pids whose claims lie
    swap: bool = False
    bind: bool = False
    pid_max_lie: bool = False
    env_rename: bool = False
    tracer_masked: bool = False
    tracer_planted: bool = False
    tampered: frozenset[str] = field(default_factory=frozenset)  # "path/name"

    @property
    def listing_differs(self) -> bool:
        return bool(self.hidden_pids or self.ghost_pids) or self.swap


def ground_truth(model: SystemModel, transforms: tuple[Transform, ...]) -> GroundTruth:
    hidden: set[int] = set()
    ghosts: set[int] = set()
    probe_sab: set[int] = set()
    claim_sab: set[int] = set()
    swap = bind = pid_max_lie = env_rename = masked = planted = False
    tampered: set[str] = set()
    real_tracer = model.tracers.get(model.scanner_pid, 0)
    for t in transforms:
        if isinstance(t, HideFromListing):
            hidden.add(t.pid)
        elif isinstance(t, GhostEntry):
            ghosts.add(t.pid)
        elif isinstance(t, FailProbes):
            probe_sab.add(t.pid)
        elif isinstance(t, VforkClaim):
            claim_sab.add(t.pid)
        elif isinstance(t, BindMountProc):
            bind = True
            hidden.add(t.hidden_pid)
            probe_sab.add(t.hidden_pid)
        elif isinstance(t, PidNamespaceSwap):
            swap = True
            hidden.update(set(model.processes) - t.visible)
        elif isinstance(t, PidMaxTruncated):
            pid_max_lie = True
        elif isinstance(t, EnvStrip):
            env_rename = any(
                e.split("=", 1)[0] == t.var for e in model.env_of_scanner
            )
        elif isinstance(t, FakeTracerPid):
            if t.value == 0 and real_tracer:
                masked = True
            if t.value != 0 and t.value != real_tracer:
                planted = True
        elif isinstance(t, TamperGetdents):
            tampered.add(f"{t.path}/{t.name}")
        elif isinstance(t, OutputFilter):
            pass  # acts on rendered text, not the view
    return GroundTruth(
        hidden_pids=frozenset(hidden),
        ghost_pids=frozenset(ghosts),
        probe_sabotaged=frozenset(probe_sab),
        claim_sabotaged=frozenset(claim_sab),
        swap=swap,
        bind=bind,
        pid_max_lie=pid_max_lie,
        env_rename=env_rename,
        tracer_masked=masked,
        tracer_planted=planted,
        tampered=frozenset(tampered),
    )


def _preload_in_model(model: SystemModel, transforms: tuple[Transform, ...]) -> bool:
    stripped = {t.var for t in transforms if isinstance(t, EnvStrip)}
    env_hit = any(
        e.split("=", 1)[0] == "LD_PRELOAD" and "LD_PRELOAD" not in stripped
        for e in model.env_of_scanner
    )
    raw = model.preload_file or b""
    file_hit = any(
        line.strip() and not line.strip().startswith(b"#")
        for line in raw.splitlines()
    )
    return env_hit or file_hit


def check_report_soundness(
    report: ScanReport, model: SystemModel, transforms: tuple[Transform, ...]
) -> list[str]:
    """Violations: confirmed findings the ground truth does not justify.

    The test direction here is soundness only — no confirmed conviction
    without a matching lie. Completeness (every detectable lie found) is
    asserted separately per designation, because several lies are
    legitimately invisible to every check.
    """
    truth = ground_truth(model, transforms)
    real_tracer = model.tracers.get(model.scanner_pid, 0)
    violations: list[str] = []
    for a in report.anomalies:
        if a.confidence is not Confidence.CONFIRMED:
            continue
        kind, subject = a.kind, a.subject
        if kind is AnomalyKind.HIDDEN_FROM_LISTING:
            if subject not in truth.hidden_pids:
                violations.append(f"hidden-from-listing convicted clean pid {subject}")
        elif kind is AnomalyKind.GHOST_LISTING:
            allowed = truth.ghost_pids | truth.probe_sabotaged | truth.claim_sabotaged
            if subject not in allowed:
                violations.append(f"ghost-listing convicted clean pid {subject}")
        elif kind is AnomalyKind.CONTRADICTORY_PROBES:
            allowed = truth.probe_sabotaged | truth.claim_sabotaged
            if subject not in allowed:
                violations.append(f"contradictory-probes convicted clean pid {subject}")
        elif kind is AnomalyKind.PROCESS_COUNT_MISMATCH:
            if not truth.listing_differs:
                violations.append("count mismatch confirmed on a truthful listing")
        elif kind is AnomalyKind.NAMESPACE_MISMATCH:
            if not (truth.swap or truth.bind):
                violations.append("namespace mismatch without any namespace move")
        elif kind is AnomalyKind.PROC_MOUNT_SUSPICIOUS:
            if not truth.bind:
                violations.append("proc mount flagged without a bind mount")
        elif kind is AnomalyKind.PID_MAX_SUSPICIOUS:
            if not truth.pid_max_lie:
                violations.append("pid ceiling flagged without truncation")
        elif kind in (AnomalyKind.PRELOAD_ENV_ACTIVE, AnomalyKind.PRELOAD_FILE_ACTIVE):
            if not _preload_in_model(model, transforms):
                violations.append(f"{kind.value} without preload configured")
        elif kind is AnomalyKind.TRACER_PRESENT:
            reported_ok = (real_tracer and not truth.tracer_masked) or truth.tracer_planted
            if not reported_ok:
                violations.append("tracer confirmed while status truthfully reads zero")
        elif kind is AnomalyKind.HIDDEN_DIRENT:
            # subject is either the audited path (link arithmetic) or path/name
            if not any(
                subject == t or str(subject) == t.rsplit("/", 1)[0]
                for t in truth.tampered
            ):
                violations.append(f"hidden dirent convicted clean path {subject}")
        elif kind is AnomalyKind.OUTPUT_NOT_TERMINAL:
            violations.append("output-channel heuristic must never confirm")
        elif kind is AnomalyKind.UNEXPECTED_MAPPED_OBJECT:
            violations.append("mapped-object heuristic must never confirm")
        elif kind is AnomalyKind.SYSCALL_LATENCY_OUTLIER:
            violations.append("latency heuristic must never confirm")
    return violations


# -- random stacks -------------------------------------------------------------------


def random_transform_stack(
    model: SystemModel,
    rng,
    max_transforms: int = 3,
) -> tuple[Transform, ...]:
    """A random, valid transform stack against `model` (possibly empty).

    Draws up to `max_transforms` distinct transform kinds and instantiates
    each against whatever the model can support, skipping kinds the model
    cannot host (e.g. directory tampering on a model with no directories).
    """
    victims = sorted(pid for pid in model.processes if pid not in (1, model.scanner_pid))

    def pick_ghost_pid() -> int | None:
        for _ in range(64):
            pid = rng.randint(2, model.pid_max)
            if pid not in model.processes:
                return pid
        return None

    builders = {
        "hide": lambda: HideFromListing(rng.choice(victims)) if victims else None,
        "fail": lambda: FailProbes(
            rng.choice(victims),
            frozenset(rng.sample(sorted(ProbeKind, key=lambda k: k.value),
                                 rng.randint(1, len(ProbeKind)))),
        )
        if victims
        else None,
        "vfork": lambda: VforkClaim(rng.choice(victims)) if victims else None,
        "ghost": lambda: (lambda pid: GhostEntry(pid) if pid else None)(pick_ghost_pid()),
        "pidmax": lambda: PidMaxTruncated(rng.randint(2, model.pid_max - 1))
        if model.pid_max > 2
        else None,
        "bind": lambda: BindMountProc(rng.choice(victims)) if victims else None,
        "swap": lambda: PidNamespaceSwap(
            frozenset({model.scanner_pid}
                      | set(rng.sample(victims, min(len(victims), rng.randint(0, 5))))),
        ),
        "env": lambda: EnvStrip("LD_PRELOAD"),
        "filter": lambda: OutputFilter(rng.choice(["Found HIDDEN PID", r"\d{4,}"])),
        "tamper": lambda: (
            (lambda path: TamperGetdents(path, rng.choice(model.directories[path]).name))(
                rng.choice(sorted(model.directories))
            )
            if model.directories
            else None
        ),
        "tracer": lambda: FakeTracerPid(rng.choice([0, rng.randint(2, 99_999)])),
    }
    chosen = rng.sample(sorted(builders), rng.randint(0, max_transforms))
    stack: list[Transform] = []
    for name in chosen:
        t = builders[name]()
        if t is not None:
            stack.append(t)
    return tuple(stack)

"""Simulated system view: a model seen through a stack of evasion transforms.

The view is immutable after construction and answers every SystemView
operation from precomputed tables, so repeated scans are deterministic and
cheap. Channels a transform does not declare are bit-identical to the
untransformed view (tested property).

Trust semantics mirror the live backend: `list_proc_pids` is the channel the
transforms get to lie on (it models hooked enumeration); probes, file reads
and raw dirents are the trusted channel and lie only for transforms that
specifically subvert them (fail_probes, bind_mount_proc, pid_namespace_swap,
tamper_getdents).
"""
from __future__ import annotations

from dataclasses import replace

from . import model as m
from .model import SystemModel
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
    validate_transforms,
)
from .types import (
    ALL_PROBES,
    FS_PROBES,
    DescriptorState,
    DirEntry,
    ErrnoClass,
    FileKind,
    InvalidTransform,
    MappedObject,
    MountEntry,
    NamespaceIds,
    ProbeKind,
    ProbeOutcome,
    Verdict,
)
from .view import PROC_FILE_NAMES, SystemView

# Fresh namespace ids handed out when a transform moves the scanner into a
# private namespace. Plausible kernel-style values, fixed for determinism.
FRESH_PID_NS = 4026534141
FRESH_MNT_NS = 4026534142
FRESH_USER_NS = 4026534140
FRESH_BIND_MNT_NS = 4026534322

# Non-numeric /proc entries every procfs shows.
_PROC_STATIC_ENTRIES = (
    ("self", FileKind.SYMLINK),
    ("thread-self", FileKind.SYMLINK),
    ("sys", FileKind.DIRECTORY),
    ("net", FileKind.SYMLINK),
    ("uptime", FileKind.REGULAR),
    ("meminfo", FileKind.REGULAR),
    ("stat", FileKind.REGULAR),
    ("mounts", FileKind.SYMLINK),
)

# Interned outcome singletons; sweeps construct millions of these otherwise.
_ALIVE = {k: ProbeOutcome(k, Verdict.ALIVE) for k in ProbeKind}
_ABSENT = {k: ProbeOutcome(k, Verdict.ABSENT, ErrnoClass.NO_ENTITY) for k in ProbeKind}
_DENIED = {k: ProbeOutcome(k, Verdict.DENIED, ErrnoClass.PERMISSION_DENIED) for k in ProbeKind}


class SimulatedView(SystemView):
    """A SystemModel observed through zero or more transforms."""

    is_live = False

    def __init__(self, model: SystemModel, transforms: tuple[Transform, ...] = ()):
        validate_transforms(model, transforms)
        swaps = [t for t in transforms if isinstance(t, PidNamespaceSwap)]
        binds = [t for t in transforms if isinstance(t, BindMountProc)]
        if len(swaps) > 1 or len(binds) > 1:
            raise InvalidTransform("at most one namespace swap / proc bind per view")
        self._model = model
        self._transforms = transforms
        self._swap = swaps[0] if swaps else None
        self._bind = binds[0] if binds else None
        self._build()

    # -- construction -------------------------------------------------------

    def _build(self) -> None:
        model = self._model
        oracle = frozenset(model.processes)

        # pid mapping: model pid -> pid as this view shows it
        if self._swap is not None:
            others = sorted(self._swap.visible - {model.scanner_pid})
            self._map = {model.scanner_pid: 1}
            self._map.update({pid: i + 2 for i, pid in enumerate(others)})
        else:
            self._map = {pid: pid for pid in oracle}
        self._unmap = {v: k for k, v in self._map.items()}
        self._alive_view_pids = frozenset(self._map.values())

        hidden_model_pids: set[int] = {
            t.pid for t in self._transforms if isinstance(t, HideFromListing)
        }
        if self._bind is not None:
            hidden_model_pids.add(self._bind.hidden_pid)
        # pids hidden from the listing, in view pid space (invisible-to-the-
        # namespace pids are simply absent from the map already)
        self._hidden_view_pids = frozenset(
            self._map[p] for p in hidden_model_pids if p in self._map
        )

        ghosts = frozenset(
            t.pid for t in self._transforms if isinstance(t, GhostEntry)
        )
        self._ghost_pids = ghosts
        self._listing = frozenset(
            (self._alive_view_pids - self._hidden_view_pids) | ghosts
        )

        # probe channel overrides, in view pid space
        fails: dict[int, set[ProbeKind]] = {}
        for t in self._transforms:
            if isinstance(t, FailProbes) and t.pid in self._map:
                fails.setdefault(self._map[t.pid], set()).update(t.probes)
        if self._bind is not None and self._bind.hidden_pid in self._map:
            fails.setdefault(self._map[self._bind.hidden_pid], set()).update(FS_PROBES)
        self._probe_fail = {pid: frozenset(ks) for pid, ks in fails.items()}

        self._claim_free = frozenset(
            self._map[t.pid]
            for t in self._transforms
            if isinstance(t, VforkClaim) and t.pid in self._map
        )

        self._pid_max = model.pid_max
        for t in self._transforms:
            if isinstance(t, PidMaxTruncated):
                self._pid_max = t.value

        # environment after any strip/rename
        env = list(model.env_of_scanner)
        for t in self._transforms:
            if isinstance(t, EnvStrip):
                env = [
                    ("x" + e[1:]) if e.split("=", 1)[0] == t.var else e
                    for e in env
                ]
        self._env = tuple(env)

        # tracer channel
        true_tracer = model.tracers.get(model.scanner_pid, 0)
        self._true_tracer = true_tracer
        fake = [t for t in self._transforms if isinstance(t, FakeTracerPid)]
        self._reported_tracer = fake[-1].value if fake else true_tracer
        self._trace_masked = bool(fake)

        # mount table
        if self._bind is not None:
            mounts = []
            for entry in model.mounts:
                if entry.mount_point == "/proc":
                    mounts.append(
                        MountEntry("/proc", "tmpfs", "/tmp/.fakeproc",
                                   m.TMPFS_MAGIC, frozenset({"bind"}))
                    )
                else:
                    mounts.append(entry)
            self._mounts = tuple(mounts)
        else:
            self._mounts = model.mounts

        # directory tables after dirent tampering
        dirs: dict[str, tuple[DirEntry, ...]] = dict(model.directories)
        for t in self._transforms:
            if isinstance(t, TamperGetdents):
                dirs[t.path] = tuple(e for e in dirs[t.path] if e.name != t.name)
        self._dirs = dirs

        # scanner identity
        if self._swap is not None:
            self._self_pid = 1
            self._parent_pid = 0
            self._self_ns = NamespaceIds(FRESH_PID_NS, FRESH_MNT_NS, FRESH_USER_NS)
        elif self._bind is not None:
            self._self_pid = model.scanner_pid
            self._parent_pid = model.record(model.scanner_pid).ppid
            base = model.ns_of(model.scanner_pid)
            self._self_ns = replace(base, mnt_ns=FRESH_BIND_MNT_NS)
        else:
            self._self_pid = model.scanner_pid
            self._parent_pid = model.record(model.scanner_pid).ppid
            self._self_ns = model.ns_of(model.scanner_pid)

        self._latency = model.base_latency_ns * (
            model.trace_latency_multiplier if true_tracer else 1.0
        )

    # -- enumeration ---------------------------------------------------------

    def list_proc_pids(self) -> frozenset[int]:
        return self._listing

    def _proc_dirents(self) -> tuple[DirEntry, ...]:
        symlink_farm = self._bind is not None
        entries = []
        for i, pid in enumerate(sorted(self._listing)):
            kind = FileKind.SYMLINK if symlink_farm else FileKind.DIRECTORY
            entries.append(DirEntry(str(pid), 10_000 + i, kind))
        for i, (name, kind) in enumerate(_PROC_STATIC_ENTRIES):
            if symlink_farm and name == "sys":
                kind = FileKind.DIRECTORY  # the fake tree recreates sys for pid_max
            elif symlink_farm:
                kind = FileKind.SYMLINK
            entries.append(DirEntry(name, 20_000 + i, kind))
        return tuple(entries)

    def list_dir(self, path: str) -> tuple[DirEntry, ...]:
        if path == "/proc":
            return self._proc_dirents()
        if path in self._dirs:
            return self._dirs[path]
        raise FileNotFoundError(path)

    def dir_nlink(self, path: str) -> int:
        if path in self._model.directories:
            return self._model.dir_nlink(path)  # truth: tampering can't touch it
        raise FileNotFoundError(path)

    def entry_exists(self, path: str, name: str) -> bool:
        # probe-by-name goes through stat, not enumeration: answer from truth
        entries = self._model.directories.get(path)
        if entries is None:
            raise FileNotFoundError(path)
        return any(e.name == name for e in entries)

    # -- probes ---------------------------------------------------------------

    def probe_pid(self, pid: int, kind: ProbeKind) -> ProbeOutcome:
        if pid < 1:
            return _ABSENT[kind]
        if kind in self._probe_fail.get(pid, ()):
            return _ABSENT[kind]
        if pid in self._alive_view_pids:
            return _ALIVE[kind]
        return _ABSENT[kind]

    def sweep_probes(
        self, lo: int, hi: int, kinds: frozenset[ProbeKind]
    ) -> dict[int, tuple[ProbeOutcome, ...]]:
        # Shortcut: only pids with at least one non-ABSENT answer can appear,
        # and in this backend that is exactly the alive set (minus fully
        # failed batteries). Identical to probing every pid in [lo, hi].
        hits: dict[int, tuple[ProbeOutcome, ...]] = {}
        for pid in sorted(self._alive_view_pids):
            if pid < lo or pid > hi:
                continue
            outcomes = self.probe_battery(pid, kinds)
            if any(o.verdict is not Verdict.ABSENT for o in outcomes):
                hits[pid] = outcomes
        return hits

    def claim_pid(self, pid: int) -> bool:
        if pid in self._claim_free:
            return True
        return pid not in self._alive_view_pids

    def claim_sweep(self, lo: int, hi: int) -> frozenset[int]:
        return frozenset(
            pid
            for pid in self._alive_view_pids
            if lo <= pid <= hi and pid not in self._claim_free
        )

    @property
    def supports_claims(self) -> bool:
        return True

    # -- files and tables -------------------------------------------------------

    def _render_ns(self, ns: NamespaceIds, which: str) -> bytes:
        val = {"ns/pid": ns.pid_ns, "ns/mnt": ns.mnt_ns, "ns/user": ns.user_ns}[which]
        return f"{which.split('/')[1]}:[{val}]".encode()

    def read_proc_file(self, pid: int, name: str) -> bytes:
        if name not in PROC_FILE_NAMES:
            raise ValueError(f"unsupported proc file name: {name}")
        if pid in self._ghost_pids or pid not in self._unmap:
            raise FileNotFoundError(f"/proc/{pid}/{name}")
        model_pid = self._unmap[pid]
        if self._bind is not None and self._map.get(self._bind.hidden_pid) == pid:
            raise FileNotFoundError(f"/proc/{pid}/{name}")  # no entry in the fake tree
        rec = self._model.record(model_pid)
        is_scanner = model_pid == self._model.scanner_pid

        if name.startswith("ns/"):
            if self._swap is not None:
                ns = NamespaceIds(FRESH_PID_NS, FRESH_MNT_NS, FRESH_USER_NS)
            elif is_scanner:
                ns = self._self_ns
            else:
                ns = self._model.ns_of(model_pid)
            return self._render_ns(ns, name)

        # translate pid fields into view space
        view_ppid = self._map.get(rec.ppid, 0)
        view_rec = replace(
            rec, pid=pid, ppid=view_ppid,
            pgid=self._map.get(rec.pgid, rec.pgid if self._swap is None else 0),
            sid=self._map.get(rec.sid, rec.sid if self._swap is None else 0),
        )
        if name == "status":
            if is_scanner:
                tracer = self._reported_tracer
            else:
                tracer = self._model.tracers.get(model_pid, 0)
                tracer = self._map.get(tracer, tracer if self._swap is None else 0)
            return m.render_status(view_rec, tracer)
        if name == "stat":
            return m.render_stat(view_rec)
        if name == "maps":
            maps = self._model.scanner_maps if is_scanner else (
                MappedObject(f"/usr/bin/{rec.comm}", "r-xp"),
                MappedObject(m.LOADER_PATH, "r-xp"),
                MappedObject(m.VDSO, "r-xp"),
            )
            return m.render_maps(maps)
        if name == "environ":
            return m.render_environ(self._env if is_scanner else ("PATH=/usr/bin",))
        if name == "cmdline":
            return m.render_cmdline(rec.cmdline)
        raise AssertionError(name)

    def mounts(self) -> tuple[MountEntry, ...]:
        return self._mounts

    def pid_max(self) -> int:
        return self._pid_max

    def process_count_estimate(self) -> int:
        # the global task counter ignores namespaces and listing tricks
        return len(self._model.processes)

    # -- scanner identity ----------------------------------------------------------

    def self_pid(self) -> int:
        return self._self_pid

    def parent_pid(self) -> int:
        return self._parent_pid

    def self_namespaces(self) -> NamespaceIds:
        return self._self_ns

    def scanner_environ(self) -> tuple[str, ...]:
        return self._env

    def self_maps(self) -> tuple[MappedObject, ...]:
        return self._model.scanner_maps

    def preload_file(self) -> bytes | None:
        return self._model.preload_file

    def self_tracer_pid(self) -> int:
        return self._reported_tracer

    def self_trace_allowed(self) -> bool | None:
        if self._trace_masked:
            return True  # the interposed trace call lies about success
        return self._true_tracer == 0

    def syscall_latency_ns(self, samples: int = 64) -> float:
        return self._latency

    def latency_baseline_ns(self) -> float | None:
        return self._model.base_latency_ns

    def stdout_descriptor(self) -> DescriptorState:
        return self._model.scanner_stdout

    def clock_ns(self) -> int:
        return 0

"""Evasion transforms: declarative lies a view can tell about a model.

Each transform rewrites one or more *channels* of a simulated view (listing,
probes, claims, files, dirents, mounts, ...) and leaves every other channel
untouched — that locality is a tested property. Transforms exist only as
in-memory view rewrites for the simulator; nothing here can conceal anything
on a real system.

A transform validates itself against the model it is about to distort, so a
scenario that references a nonexistent pid fails fast with InvalidTransform.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .model import SystemModel
from .types import ALL_PROBES, FS_PROBES, InvalidTransform, ProbeKind

# Channel identifiers, used by the locality property tests.
CH_LISTING = "listing"
CH_CLAIMS = "claims"
CH_FILES = "files"
CH_ENV = "env"
CH_MOUNTS = "mounts"
CH_PID_MAX = "pid-max"
CH_NAMESPACES = "namespaces"
CH_TRACER = "tracer"
CH_OUTPUT = "output"
CH_IDENTITY = "identity"
CH_PROC_TREE = "proc-tree"   # the /proc directory tree itself (fs probes + dirents)


def ch_probe(kind: ProbeKind) -> str:
    return f"probe:{kind.value}"


def ch_dirents(path: str) -> str:
    return f"dirents:{path}"


@dataclass(frozen=True)
class Transform:
    """Base class. Subclasses declare their channels and validate themselves."""

    def validate(self, model: SystemModel) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    def channels(self) -> frozenset[str]:  # pragma: no cover - abstract
        raise NotImplementedError


def _require_pid(model: SystemModel, pid: int, who: str) -> None:
    if pid not in model.processes:
        raise InvalidTransform(f"{who}: pid {pid} is not in the model")


@dataclass(frozen=True)
class HideFromListing(Transform):
    """The listing omits this pid; nothing else changes."""

    pid: int

    def validate(self, model: SystemModel) -> None:
        _require_pid(model, self.pid, "hide_from_listing")
        if self.pid == model.scanner_pid:
            raise InvalidTransform("hiding the scanner from itself is not modeled")

    def channels(self) -> frozenset[str]:
        return frozenset({CH_LISTING})


@dataclass(frozen=True)
class FailProbes(Transform):
    """The named probe channels answer no-such-process for this pid."""

    pid: int
    probes: frozenset[ProbeKind] = field(default=ALL_PROBES)

    def validate(self, model: SystemModel) -> None:
        _require_pid(model, self.pid, "fail_probes")
        if not self.probes:
            raise InvalidTransform("fail_probes: empty probe set")

    def channels(self) -> frozenset[str]:
        return frozenset(ch_probe(k) for k in self.probes)


@dataclass(frozen=True)
class VforkClaim(Transform):
    """The pid-claim channel reports this pid as free although it is in use."""

    pid: int

    def validate(self, model: SystemModel) -> None:
        _require_pid(model, self.pid, "vfork_claim")

    def channels(self) -> frozenset[str]:
        return frozenset({CH_CLAIMS})


@dataclass(frozen=True)
class GhostEntry(Transform):
    """The listing shows a pid that does not exist at all."""

    pid: int

    def validate(self, model: SystemModel) -> None:
        if self.pid in model.processes:
            raise InvalidTransform("ghost_entry: pid exists; a ghost must not")
        if not (1 <= self.pid <= model.pid_max):
            raise InvalidTransform("ghost_entry: pid outside the pid space")

    def channels(self) -> frozenset[str]:
        return frozenset({CH_LISTING})


@dataclass(frozen=True)
class PidMaxTruncated(Transform):
    """The pid ceiling reads lower than it really is (shrinks sweep ranges)."""

    value: int

    def validate(self, model: SystemModel) -> None:
        if self.value < 2:
            raise InvalidTransform("pid_max_truncated: value must be >= 2")
        if self.value >= model.pid_max:
            raise InvalidTransform("pid_max_truncated: value does not truncate")

    def channels(self) -> frozenset[str]:
        return frozenset({CH_PID_MAX})


@dataclass(frozen=True)
class BindMountProc(Transform):
    """A look-alike tree is bind-mounted over /proc, omitting one pid.

    Faithful to the real attack: the fake tree is a symlink farm on tmpfs, the
    hidden pid has no entry (so listing and filesystem probes miss it), a
    hand-made pid ceiling file is present, and the scanner sits in a private
    mount namespace (the attack needs one to remount /proc).
    """

    hidden_pid: int

    def validate(self, model: SystemModel) -> None:
        _require_pid(model, self.hidden_pid, "bind_mount_proc")
        if self.hidden_pid == model.scanner_pid:
            raise InvalidTransform("bind_mount_proc: cannot hide the scanner")

    def channels(self) -> frozenset[str]:
        return frozenset(
            {CH_LISTING, CH_MOUNTS, CH_PROC_TREE, CH_NAMESPACES}
            | {ch_probe(k) for k in FS_PROBES}
        )


@dataclass(frozen=True)
class PidNamespaceSwap(Transform):
    """The scanner runs inside a fresh pid namespace seeing only `visible`.

    Visible model pids are renumbered into the new namespace (the scanner
    becomes pid 1). The global task counter is unaffected — that asymmetry is
    what the namespace audit leans on.
    """

    visible: frozenset[int]

    def validate(self, model: SystemModel) -> None:
        if model.scanner_pid not in self.visible:
            raise InvalidTransform("pid_namespace_swap: scanner must stay visible")
        missing = self.visible - set(model.processes)
        if missing:
            raise InvalidTransform(f"pid_namespace_swap: unknown pids {sorted(missing)}")

    def channels(self) -> frozenset[str]:
        return frozenset(
            {CH_LISTING, CH_CLAIMS, CH_FILES, CH_NAMESPACES, CH_IDENTITY, CH_PROC_TREE}
            | {ch_probe(k) for k in ALL_PROBES}
        )


@dataclass(frozen=True)
class EnvStrip(Transform):
    """The scanner's environment has this variable neutered before it starts.

    Models the double-personality trick: the first character of the name is
    rewritten (LD_PRELOAD -> xD_PRELOAD), so the loader ignores it, the view
    is self-consistent, and only the rename pattern remains as a trace.
    """

    var: str

    def validate(self, model: SystemModel) -> None:
        if not self.var or "=" in self.var:
            raise InvalidTransform("env_strip: var must be a bare variable name")

    def channels(self) -> frozenset[str]:
        return frozenset({CH_ENV})


@dataclass(frozen=True)
class OutputFilter(Transform):
    """Lines matching the pattern are deleted from the *rendered report text*.

    This transform never touches view data; the scenario runner applies it to
    the report stream after rendering, the way a pty relay filters output.
    """

    pattern: str

    def validate(self, model: SystemModel) -> None:
        if not self.pattern:
            raise InvalidTransform("output_filter: empty pattern")
        try:
            re.compile(self.pattern)
        except re.error as exc:
            raise InvalidTransform(f"output_filter: bad pattern: {exc}") from exc

    def channels(self) -> frozenset[str]:
        return frozenset({CH_OUTPUT})

    def apply_to_text(self, text: str) -> str:
        rx = re.compile(self.pattern)
        kept = [line for line in text.splitlines(keepends=True) if not rx.search(line)]
        return "".join(kept)


@dataclass(frozen=True)
class TamperGetdents(Transform):
    """Raw enumeration of one directory omits one entry name.

    The directory's hard-link count is *not* adjusted — hiding a subdirectory
    leaves the count contradicting the visible entries, which is exactly what
    the hidden-dirent audit measures. Hiding a regular file leaves no such
    arithmetic trace (documented blind spot without a candidate list).
    """

    path: str
    name: str

    def validate(self, model: SystemModel) -> None:
        entries = model.directories.get(self.path)
        if entries is None:
            raise InvalidTransform(f"tamper_getdents: {self.path} not in the model")
        if not any(e.name == self.name for e in entries):
            raise InvalidTransform(
                f"tamper_getdents: {self.name!r} not present in {self.path}"
            )

    def channels(self) -> frozenset[str]:
        return frozenset({ch_dirents(self.path)})


@dataclass(frozen=True)
class FakeTracerPid(Transform):
    """The scanner's status file reports this TracerPid regardless of truth.

    With value 0 this masks a real tracer; the self-trace answer is faked
    coherently (reports success), leaving only the latency heuristic.
    """

    value: int

    def validate(self, model: SystemModel) -> None:
        if self.value < 0:
            raise InvalidTransform("fake_tracer_pid: value must be >= 0")

    def channels(self) -> frozenset[str]:
        return frozenset({CH_TRACER})


def validate_transforms(model: SystemModel, transforms: tuple[Transform, ...]) -> None:
    for t in transforms:
        t.validate(model)


def output_filters(transforms: tuple[Transform, ...]) -> tuple[OutputFilter, ...]:
    return tuple(t for t in transforms if isinstance(t, OutputFilter))

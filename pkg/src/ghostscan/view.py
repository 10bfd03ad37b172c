"""The single choke point between detection logic and the system under test.

Scan families and audits never touch the operating system directly: everything
they learn comes through a SystemView. Two backends implement it — a simulated
one over an explicit model (offline, deterministic) and a live Linux one.

Trust note that shapes the whole design: `list_proc_pids` is the *user-visible*
enumeration channel and on the live backend deliberately goes through the
ordinary (interposable) library path, because that is the channel concealment
tooling subverts. Every other live operation enters the kernel directly through
a statically linked helper. Cross-view detection is exactly the disagreement
between those two trust levels.
"""
from __future__ import annotations

import abc
import errno as _errno
import re

from .types import (
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

# Names read_proc_file accepts, relative to /proc/<pid>/.
PROC_FILE_NAMES = frozenset(
    {"status", "stat", "maps", "environ", "cmdline", "ns/pid", "ns/mnt", "ns/user"}
)

_NS_LINK_RE = re.compile(r"^(pid|mnt|user|net|uts|ipc|cgroup|time):\[(\d+)\]$")


def classify_errno(err: int) -> ErrnoClass:
    """Map a raw errno to the coarse classes the verdict logic cares about."""
    if err in (_errno.ESRCH, _errno.ENOENT):
        return ErrnoClass.NO_ENTITY
    if err in (_errno.EPERM, _errno.EACCES):
        return ErrnoClass.PERMISSION_DENIED
    return ErrnoClass.OTHER


def outcome_from_errno(kind: ProbeKind, err: int) -> ProbeOutcome:
    """Build the outcome for a failed probe from its errno."""
    cls = classify_errno(err)
    if cls is ErrnoClass.NO_ENTITY:
        return ProbeOutcome(kind, Verdict.ABSENT, cls)
    if cls is ErrnoClass.PERMISSION_DENIED:
        return ProbeOutcome(kind, Verdict.DENIED, cls)
    return ProbeOutcome(kind, Verdict.INCONCLUSIVE, cls)


def parse_ns_link(text: str) -> int:
    """Parse the textual form of a namespace link, e.g. 'pid:[4026531836]'.

    Raises ValueError on any other shape — callers treat that as anomaly
    *input* (a view lying about its namespaces), never as a crash.
    """
    m = _NS_LINK_RE.match(text.strip())
    if not m:
        raise ValueError(f"not a namespace link: {text!r}")
    return int(m.group(2))


class SystemView(abc.ABC):
    """Everything the scanner may learn about a system."""

    #: live backends pay real syscall costs and suffer real races
    is_live: bool = False

    # -- enumeration ------------------------------------------------------

    @abc.abstractmethod
    def list_proc_pids(self) -> frozenset[int]:
        """Numeric top-level /proc entries, via the user-visible channel.

        Strict all-digits rule: names like '123abc' or 'self' never appear.
        """

    @abc.abstractmethod
    def list_dir(self, path: str) -> tuple[DirEntry, ...]:
        """Raw directory enumeration (trusted channel). Order is meaningless."""

    @abc.abstractmethod
    def dir_nlink(self, path: str) -> int:
        """Hard-link count of a directory (2 + number of subdirectories)."""

    @abc.abstractmethod
    def entry_exists(self, path: str, name: str) -> bool:
        """Probe-by-name: does path/name answer a direct stat?"""

    # -- probes ------------------------------------------------------------

    @abc.abstractmethod
    def probe_pid(self, pid: int, kind: ProbeKind) -> ProbeOutcome:
        """Ask the kernel about one pid through one channel (trusted)."""

    def probe_battery(self, pid: int, kinds: frozenset[ProbeKind]) -> tuple[ProbeOutcome, ...]:
        """All requested probes against one pid, in stable kind order."""
        return tuple(self.probe_pid(pid, k) for k in sorted(kinds, key=lambda k: k.value))

    def sweep_probes(
        self, lo: int, hi: int, kinds: frozenset[ProbeKind]
    ) -> dict[int, tuple[ProbeOutcome, ...]]:
        """Probe every pid in [lo, hi]; return only pids with a non-ABSENT outcome.

        Semantically each pid in the range is probed exactly once per kind.
        Backends may shortcut pids that provably answer ABSENT everywhere,
        because all-ABSENT pids never influence any consumer.
        """
        hits: dict[int, tuple[ProbeOutcome, ...]] = {}
        for pid in range(lo, hi + 1):
            outcomes = self.probe_battery(pid, kinds)
            if any(o.verdict is not Verdict.ABSENT for o in outcomes):
                hits[pid] = outcomes
        return hits

    def claim_pid(self, pid: int) -> bool:
        """True if the pid-claim channel says the pid is free, False if in use.

        Raises UnsupportedProbe where claiming is not available (live systems:
        real process creation is out of scope; callers fall back to the probe
        battery).
        """
        from .types import UnsupportedProbe

        raise UnsupportedProbe("pid claiming unavailable on this view")

    def claim_sweep(self, lo: int, hi: int) -> frozenset[int]:
        """Pids in [lo, hi] the claim channel reports as in use.

        Semantically claims every pid in the range exactly once; backends may
        shortcut pids that provably claim as free.
        """
        return frozenset(pid for pid in range(lo, hi + 1) if not self.claim_pid(pid))

    @property
    def supports_claims(self) -> bool:
        return False

    # -- files and tables --------------------------------------------------

    @abc.abstractmethod
    def read_proc_file(self, pid: int, name: str) -> bytes:
        """Read /proc/<pid>/<name> (trusted channel).

        `name` must be one of PROC_FILE_NAMES. ns/* links come back as their
        textual form (e.g. b'pid:[4026531836]'). Raises FileNotFoundError or
        PermissionError like the real filesystem would.
        """

    @abc.abstractmethod
    def mounts(self) -> tuple[MountEntry, ...]:
        """The mount table with statfs magic per mount point."""

    @abc.abstractmethod
    def pid_max(self) -> int:
        """Kernel pid ceiling (trusted read)."""

    def pid_max_second_path(self) -> int | None:
        """Re-read of the pid ceiling through an independent channel, if any.

        None means the backend has no second path (the simulated one doesn't).
        Raises FileNotFoundError if the file vanished from the second path.
        """
        return None

    @abc.abstractmethod
    def process_count_estimate(self) -> int:
        """Task count from the kernel's global counter, never from /proc.

        On live systems this counts *tasks* (threads included), so it is an
        upper bound on the process count; on the simulated backend it equals
        the exact process count.
        """

    def count_tolerance(self, estimate: int) -> int:
        """Allowed |listing - estimate| slack before the count check fires.

        Zero on immutable backends; live backends tolerate scan-time races.
        """
        return 0

    # -- scanner identity ---------------------------------------------------

    @abc.abstractmethod
    def self_pid(self) -> int: ...

    @abc.abstractmethod
    def parent_pid(self) -> int: ...

    @abc.abstractmethod
    def self_namespaces(self) -> NamespaceIds: ...

    @abc.abstractmethod
    def scanner_environ(self) -> tuple[str, ...]:
        """The scanner's raw environment block from its initial stack image.

        Never via library getenv — a hooked getenv is part of the threat model.
        """

    @abc.abstractmethod
    def self_maps(self) -> tuple[MappedObject, ...]:
        """Executable mappings of the scanner process."""

    @abc.abstractmethod
    def preload_file(self) -> bytes | None:
        """Contents of the loader preload file, or None if absent."""

    @abc.abstractmethod
    def self_tracer_pid(self) -> int:
        """TracerPid as the scanner's own status file reports it."""

    def self_trace_allowed(self) -> bool | None:
        """Whether a self-trace attempt succeeds (None: cannot be attempted).

        An existing tracer makes the attempt fail — that refusal is evidence.
        The attempt must leave the scanner untraced on success.
        """
        return None

    @abc.abstractmethod
    def syscall_latency_ns(self, samples: int = 64) -> float:
        """Median latency of a trivial syscall, in nanoseconds."""

    def latency_baseline_ns(self) -> float | None:
        """Calibrated baseline for the latency heuristic, if the view has one."""
        return None

    @abc.abstractmethod
    def stdout_descriptor(self) -> DescriptorState: ...

    # -- misc ----------------------------------------------------------------

    def clock_ns(self) -> int:
        """Report timestamp source. Fixed on deterministic backends."""
        return 0

"""Shared vocabulary for the scanner: probe kinds, verdicts, anomalies.

Everything downstream (scan families, audits, reports) speaks in these types.
They are deliberately plain: frozen dataclasses and enums, no behavior beyond
validation of the few invariants that matter.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field


class GhostscanError(Exception):
    """Base class for errors raised by this package."""


class ViewUnavailable(GhostscanError):
    """The requested backend cannot run here (wrong platform, helper missing)."""


class UnsupportedProbe(GhostscanError):
    """The view cannot issue this probe kind (e.g. claims on a live system)."""


class PidSpaceTooLarge(GhostscanError):
    """A sweep would exceed the probe budget and no override was given."""


class InvalidTransform(GhostscanError):
    """A transform references state the model does not contain."""


class MissingIntegrityLine(GhostscanError):
    """Report text does not end in a parseable integrity trailer."""


class ScenarioError(GhostscanError):
    """A scenario file is malformed or internally inconsistent."""


class ProbeKind(enum.Enum):
    """One probe channel asking the kernel about a single pid."""

    STAT = "stat"                  # stat /proc/<pid>
    CHDIR = "chdir"                # chdir /proc/<pid>
    OPENDIR = "opendir"            # opendir /proc/<pid>
    GET_PRIORITY = "getpriority"
    GET_PGID = "getpgid"
    GET_SID = "getsid"
    KILL_ZERO = "kill0"            # kill(pid, 0): permission check only, no signal
    SCHED_GET_AFFINITY = "sched_getaffinity"
    SCHED_GET_PARAM = "sched_getparam"
    SCHED_GET_SCHEDULER = "sched_getscheduler"
    SCHED_RR_GET_INTERVAL = "sched_rr_get_interval"


# The three probes that go through the /proc filesystem tree.
FS_PROBES = frozenset({ProbeKind.STAT, ProbeKind.CHDIR, ProbeKind.OPENDIR})
# The eight probes that ask about the pid directly, no filesystem involved.
SYSCALL_PROBES = frozenset(set(ProbeKind) - FS_PROBES)
ALL_PROBES = frozenset(ProbeKind)


class Verdict(enum.Enum):
    ALIVE = "alive"                # kernel answered for the pid
    ABSENT = "absent"              # kernel says no such process
    DENIED = "denied"              # kernel refused: the pid exists but is off-limits
    INCONCLUSIVE = "inconclusive"  # unexpected error class


class ErrnoClass(enum.Enum):
    NO_ENTITY = "no-entity"              # ESRCH / ENOENT family
    PERMISSION_DENIED = "permission-denied"  # EPERM / EACCES family
    OTHER = "other"


@dataclass(frozen=True, slots=True)
class ProbeOutcome:
    """Result of one probe against one pid.

    Invariants: an ABSENT verdict always carries the no-entity errno class;
    an ALIVE verdict carries no errno class at all. DENIED implies the pid
    exists (the kernel had to find it to refuse us).
    """

    kind: ProbeKind
    verdict: Verdict
    errno_class: ErrnoClass | None = None

    def __post_init__(self) -> None:
        if self.verdict is Verdict.ALIVE and self.errno_class is not None:
            raise ValueError("alive outcome must not carry an errno class")
        if self.verdict is Verdict.ABSENT and self.errno_class is not ErrnoClass.NO_ENTITY:
            raise ValueError("absent outcome must carry the no-entity errno class")
        if self.verdict is Verdict.DENIED and self.errno_class is not ErrnoClass.PERMISSION_DENIED:
            raise ValueError("denied outcome must carry the permission errno class")
        if self.verdict is Verdict.INCONCLUSIVE and self.errno_class is None:
            raise ValueError("inconclusive outcome must carry an errno class")

    @property
    def proves_existence(self) -> bool:
        """ALIVE and DENIED both prove the pid exists right now."""
        return self.verdict in (Verdict.ALIVE, Verdict.DENIED)


class ProcessState(enum.Enum):
    RUNNING = "R"
    SLEEPING = "S"
    DISK_SLEEP = "D"
    STOPPED = "T"
    ZOMBIE = "Z"


@dataclass(frozen=True, slots=True)
class NamespaceIds:
    """Inode-style namespace identifiers as /proc/<pid>/ns/* reports them."""

    pid_ns: int
    mnt_ns: int
    user_ns: int

    def __post_init__(self) -> None:
        for v in (self.pid_ns, self.mnt_ns, self.user_ns):
            if v <= 0:
                raise ValueError("namespace ids are positive integers")


@dataclass(frozen=True, slots=True)
class ProcessRecord:
    """Ground truth about one process, as the kernel would know it."""

    pid: int
    ppid: int
    comm: str
    cmdline: tuple[str, ...] = ()
    state: ProcessState = ProcessState.SLEEPING
    uid: int = 0
    pgid: int = 0
    sid: int = 0
    ns: NamespaceIds | None = None

    def __post_init__(self) -> None:
        if self.pid < 1:
            raise ValueError("pid must be >= 1")
        if self.ppid < 0:
            raise ValueError("ppid must be >= 0")


class FileKind(enum.Enum):
    REGULAR = "regular"
    DIRECTORY = "directory"
    SYMLINK = "symlink"
    FIFO = "fifo"
    SOCKET = "socket"
    BLOCK_DEVICE = "block"
    CHAR_DEVICE = "char"
    UNKNOWN = "unknown"


@dataclass(frozen=True, slots=True)
class DirEntry:
    """One directory entry as raw enumeration yields it."""

    name: str
    inode: int
    kind: FileKind


@dataclass(frozen=True, slots=True)
class MountEntry:
    """One row of the mount table, with the filesystem magic as statfs sees it."""

    mount_point: str
    fs_type: str
    source: str
    fs_magic: int
    flags: frozenset[str] = frozenset()


@dataclass(frozen=True, slots=True)
class MappedObject:
    """One executable mapping in a process address space."""

    path: str
    perms: str = "r-xp"


class DescriptorKind(enum.Enum):
    TERMINAL = "terminal"
    PIPE = "pipe"
    FILE = "file"
    OTHER = "other"


@dataclass(frozen=True, slots=True)
class DescriptorState:
    """What the scanner's stdout actually is, with its peer name if known."""

    kind: DescriptorKind
    peer: str = ""


class AnomalyKind(enum.Enum):
    HIDDEN_FROM_LISTING = "hidden-from-listing"
    GHOST_LISTING = "ghost-listing"
    CONTRADICTORY_PROBES = "contradictory-probes"
    PID_MAX_SUSPICIOUS = "pid-max-suspicious"
    NAMESPACE_MISMATCH = "namespace-mismatch"
    PROC_MOUNT_SUSPICIOUS = "proc-mount-suspicious"
    PRELOAD_ENV_ACTIVE = "preload-env-active"
    PRELOAD_FILE_ACTIVE = "preload-file-active"
    UNEXPECTED_MAPPED_OBJECT = "unexpected-mapped-object"
    TRACER_PRESENT = "tracer-present"
    OUTPUT_NOT_TERMINAL = "output-not-terminal"
    SYSCALL_LATENCY_OUTLIER = "syscall-latency-outlier"
    HIDDEN_DIRENT = "hidden-dirent"
    PROCESS_COUNT_MISMATCH = "process-count-mismatch"


class Confidence(enum.Enum):
    # CONFIRMED requires a probe that proved existence or a bit-exact mismatch;
    # heuristics (latency, rename patterns, policy checks) stay SUSPICIOUS.
    CONFIRMED = "confirmed"
    SUSPICIOUS = "suspicious"


@dataclass(frozen=True, slots=True)
class Evidence:
    """One observation backing an anomaly: which check, what it saw, what it expected."""

    check: str
    observed: str
    expected: str


@dataclass(frozen=True, slots=True)
class Anomaly:
    """A deduplicated finding. Identity is (kind, subject); evidence accumulates."""

    kind: AnomalyKind
    subject: int | str
    confidence: Confidence
    evidence: tuple[Evidence, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.evidence:
            raise ValueError("an anomaly must carry at least one piece of evidence")

    @property
    def key(self) -> tuple[str, str]:
        return (self.kind.value, str(self.subject))


def merge_anomalies(first: Anomaly, later: Anomaly) -> Anomaly:
    """Merge two findings about the same (kind, subject).

    First-seen evidence stays in front; later evidence is appended (minus exact
    duplicates). Confidence escalates to CONFIRMED if either side is confirmed.
    """
    if first.key != later.key:
        raise ValueError("cannot merge anomalies with different identity keys")
    seen = set(first.evidence)
    extra = tuple(e for e in later.evidence if e not in seen)
    conf = (
        Confidence.CONFIRMED
        if Confidence.CONFIRMED in (first.confidence, later.confidence)
        else Confidence.SUSPICIOUS
    )
    return Anomaly(first.kind, first.subject, conf, first.evidence + extra)

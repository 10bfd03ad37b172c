"""Explicit ground-truth model of a system, plus a seeded generator.

The model is what the kernel *knows*; views derived from it (see simview) are
what a possibly-lying userspace *shows*. `brute_oracle` reads the model
directly and is therefore immune to every transform — tests use it as the
reference answer.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .types import (
    DescriptorKind,
    DescriptorState,
    DirEntry,
    FileKind,
    MappedObject,
    MountEntry,
    NamespaceIds,
    ProcessRecord,
    ProcessState,
)

# statfs f_type magic numbers for the filesystems the model knows about.
PROC_SUPER_MAGIC = 0x9FA0
TMPFS_MAGIC = 0x01021994
EXT4_SUPER_MAGIC = 0xEF53
SYSFS_MAGIC = 0x62656572

DEFAULT_PID_MAX = 4_194_304  # 2**22, the common modern ceiling

# Namespace ids of the initial namespaces, in the familiar 40265xxxxx shape.
INIT_NS = NamespaceIds(pid_ns=4026531836, mnt_ns=4026531840, user_ns=4026531837)

_COMM_POOL = (
    "systemd", "sshd", "bash", "cron", "agetty", "nginx", "postgres",
    "python3", "dockerd", "containerd", "journald", "dbus-daemon",
    "rsyslogd", "udevd", "snapd", "kworker", "irqbalance", "atd",
)

SCANNER_COMM = "ghostscan"
SCANNER_EXECUTABLE = "/usr/local/bin/ghostscan"
LOADER_PATH = "/lib64/ld-linux-x86-64.so.2"
VDSO = "[vdso]"
VVAR = "[vvar]"

# A statically linked scanner maps only itself plus the kernel-provided pages.
DEFAULT_SCANNER_MAPS = (
    MappedObject(SCANNER_EXECUTABLE, "r-xp"),
    MappedObject(VDSO, "r-xp"),
    MappedObject(VVAR, "r--p"),
)

DEFAULT_MOUNTS = (
    MountEntry("/", "ext4", "/dev/root", EXT4_SUPER_MAGIC),
    MountEntry("/proc", "proc", "proc", PROC_SUPER_MAGIC),
    MountEntry("/sys", "sysfs", "sysfs", SYSFS_MAGIC),
    MountEntry("/tmp", "tmpfs", "tmpfs", TMPFS_MAGIC),
)

DEFAULT_ENV = (
    "PATH=/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin",
    "HOME=/root",
    "LANG=C.UTF-8",
    "TERM=xterm-256color",
)


@dataclass(frozen=True)
class SystemModel:
    """Everything the simulated kernel knows. Immutable; evolve via replace()."""

    processes: dict[int, ProcessRecord]
    pid_max: int = DEFAULT_PID_MAX
    scanner_pid: int = 1
    mounts: tuple[MountEntry, ...] = DEFAULT_MOUNTS
    # path -> entries ('.' and '..' implied, not stored)
    directories: dict[str, tuple[DirEntry, ...]] = field(default_factory=dict)
    # tracee pid -> tracer pid
    tracers: dict[int, int] = field(default_factory=dict)
    env_of_scanner: tuple[str, ...] = DEFAULT_ENV
    scanner_maps: tuple[MappedObject, ...] = DEFAULT_SCANNER_MAPS
    preload_file: bytes | None = None
    init_ns: NamespaceIds = INIT_NS
    scanner_stdout: DescriptorState = DescriptorState(DescriptorKind.TERMINAL, "/dev/pts/0")
    base_latency_ns: float = 120.0
    trace_latency_multiplier: float = 50.0

    def __post_init__(self) -> None:
        if 1 not in self.processes:
            raise ValueError("a model always contains pid 1")
        if self.scanner_pid not in self.processes:
            raise ValueError("scanner_pid must reference a modeled process")
        if self.pid_max < 2:
            raise ValueError("pid_max must be at least 2")
        for pid, rec in self.processes.items():
            if pid != rec.pid:
                raise ValueError(f"process table key {pid} != record pid {rec.pid}")
            if rec.ppid != 0 and rec.ppid not in self.processes and rec.pid != 1:
                raise ValueError(f"pid {pid} has ppid {rec.ppid} outside the table")

    # -- derived truths ----------------------------------------------------

    def record(self, pid: int) -> ProcessRecord:
        return self.processes[pid]

    def dir_nlink(self, path: str) -> int:
        entries = self.directories[path]
        return 2 + sum(1 for e in entries if e.kind is FileKind.DIRECTORY)

    def ns_of(self, pid: int) -> NamespaceIds:
        rec = self.processes[pid]
        return rec.ns if rec.ns is not None else self.init_ns


def brute_oracle(model: SystemModel) -> frozenset[int]:
    """The set of pids that truly exist. Reads the model, never a view."""
    return frozenset(model.processes)


def _tree_pgid_sid(rng: random.Random, ppid: int, pid: int,
                   table: dict[int, ProcessRecord]) -> tuple[int, int]:
    # Most processes share their parent's group and session; some lead new ones.
    parent = table[ppid]
    if rng.random() < 0.25:
        return pid, pid
    return (parent.pgid or ppid), (parent.sid or ppid)


def generate_model(seed: int, size: int, *, pid_max: int = DEFAULT_PID_MAX) -> SystemModel:
    """Deterministic model with `size` processes (including init).

    Same (seed, size) always yields an identical model. Pids are unique,
    ppid links form a tree rooted at pid 1, and for size >= 2 the scanner is
    one of the generated leaf processes (never init).
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if size > pid_max - 300:
        raise ValueError("size too large for the pid space")
    rng = random.Random(seed)

    table: dict[int, ProcessRecord] = {
        1: ProcessRecord(pid=1, ppid=0, comm="systemd", cmdline=("/sbin/init",),
                         state=ProcessState.SLEEPING, uid=0, pgid=1, sid=1)
    }
    # Unique pids, spread across a realistic low range but occasionally high.
    upper = min(pid_max, 99_999)
    pids: list[int] = []
    taken = {1}
    while len(pids) < size - 1:
        pid = rng.randint(2, upper)
        if pid not in taken:
            taken.add(pid)
            pids.append(pid)

    for pid in pids:
        ppid = rng.choice(list(table.keys())) if len(table) > 1 and rng.random() < 0.7 else 1
        comm = rng.choice(_COMM_POOL)
        pgid, sid = _tree_pgid_sid(rng, ppid, pid, table)
        r = rng.random()
        if r < 0.85:
            state = ProcessState.SLEEPING
        elif r < 0.95:
            state = ProcessState.RUNNING
        elif r < 0.98:
            state = ProcessState.ZOMBIE
        else:
            state = ProcessState.STOPPED
        table[pid] = ProcessRecord(
            pid=pid, ppid=ppid, comm=comm,
            cmdline=(f"/usr/bin/{comm}",) if state is not ProcessState.ZOMBIE else (),
            state=state, uid=rng.choice((0, 0, 1000)), pgid=pgid, sid=sid,
        )

    if size >= 2:
        scanner_pid = pids[-1]
        table[scanner_pid] = replace(
            table[scanner_pid], comm=SCANNER_COMM,
            cmdline=(SCANNER_EXECUTABLE, "scan"), state=ProcessState.RUNNING,
        )
    else:
        scanner_pid = 1

    return SystemModel(processes=table, pid_max=pid_max, scanner_pid=scanner_pid)


def ensure_process(model: SystemModel, pid: int, comm: str = "sleep",
                   ppid: int = 1) -> SystemModel:
    """Return a model guaranteed to contain `pid` (added as a leaf if missing)."""
    if pid in model.processes:
        return model
    table = dict(model.processes)
    table[pid] = ProcessRecord(
        pid=pid, ppid=ppid, comm=comm, cmdline=(f"/usr/bin/{comm}", "3600"),
        state=ProcessState.SLEEPING, uid=1000, pgid=pid, sid=pid,
    )
    return replace(model, processes=table)


def make_dir_entries(names: dict[str, FileKind], start_inode: int = 100_000) -> tuple[DirEntry, ...]:
    """Helper for building model directories with stable inode numbers."""
    return tuple(
        DirEntry(name=n, inode=start_inode + i, kind=k)
        for i, (n, k) in enumerate(sorted(names.items()))
    )


# -- /proc file rendering (shared by the simulated view) ----------------------


def render_status(rec: ProcessRecord, tracer_pid: int) -> bytes:
    lines = [
        f"Name:\t{rec.comm}",
        f"State:\t{rec.state.value} ({rec.state.name.lower()})",
        f"Tgid:\t{rec.pid}",
        f"Pid:\t{rec.pid}",
        f"PPid:\t{rec.ppid}",
        f"TracerPid:\t{tracer_pid}",
        f"Uid:\t{rec.uid}\t{rec.uid}\t{rec.uid}\t{rec.uid}",
        f"Gid:\t{rec.uid}\t{rec.uid}\t{rec.uid}\t{rec.uid}",
    ]
    return ("\n".join(lines) + "\n").encode()


def render_stat(rec: ProcessRecord) -> bytes:
    return (
        f"{rec.pid} ({rec.comm}) {rec.state.value} {rec.ppid} "
        f"{rec.pgid} {rec.sid} 0 -1 4194560"
    ).encode()


def render_maps(maps: tuple[MappedObject, ...]) -> bytes:
    out = []
    base = 0x55D0_0000_0000
    for i, m in enumerate(maps):
        start = base + i * 0x10_0000
        end = start + 0x4000
        out.append(f"{start:x}-{end:x} {m.perms} 00000000 fd:01 {1000 + i:>8} {m.path}")
    return ("\n".join(out) + "\n").encode()


def render_environ(env: tuple[str, ...]) -> bytes:
    return b"".join(e.encode() + b"\0" for e in env)


def render_cmdline(cmdline: tuple[str, ...]) -> bytes:
    return b"".join(c.encode() + b"\0" for c in cmdline)

"""Environment audits: concealment machinery leaves traces beside the pids.

Each audit is independent, reads only through the view, and returns findings
rather than raising: an unreadable source is itself reported (as a suspicious
finding or a partial marker), never a crash.

Confidence discipline: a finding is CONFIRMED only when the evidence is a
bit-exact contradiction or a direct kernel statement (preload variable
present, namespace ids differing, mount magic wrong, TracerPid nonzero).
Heuristics stay SUSPICIOUS: the loader-variable rename pattern, non-terminal
stdout, syscall latency, a refused self-trace (supervisors and seccomp
sandboxes refuse ptrace with the same errno a tracer causes).
"""
from __future__ import annotations

from .model import PROC_SUPER_MAGIC
from .types import (
    Anomaly,
    AnomalyKind,
    Confidence,
    DescriptorKind,
    DescriptorState,
    Evidence,
    FileKind,
    ViewUnavailable,
)
from .view import SystemView, parse_ns_link

PRELOAD_VAR = "LD_PRELOAD"
PRELOAD_FILE = "/etc/ld.so.preload"

# Mappings every process legitimately carries.
_KERNEL_MAPPINGS = ("[vdso]", "[vvar]", "[vvar_vclock]", "[vsyscall]", "[stack]", "[heap]")
_LOADER_PREFIXES = ("/lib/ld-", "/lib64/ld-", "/usr/lib/ld-", "/lib/x86_64-linux-gnu/ld-",
                    "/usr/lib/x86_64-linux-gnu/ld-", "/lib/aarch64-linux-gnu/ld-")


def audit_preload(view: SystemView, allowlist: tuple[str, ...] = ()) -> list[Anomaly]:
    """Loader-preload traces: env var, preload file, unexpected executable maps.

    The environment is read from the scanner's initial stack image (the
    /proc environ file), never through library getenv — a hooked getenv
    hiding the variable is part of the threat model. A variable whose name
    differs from the preload variable only in its first character is the
    known disable-by-rename trick and is flagged as suspicious.
    """
    findings: list[Anomaly] = []
    for entry in view.scanner_environ():
        name, _, value = entry.partition("=")
        if name == PRELOAD_VAR:
            findings.append(
                Anomaly(
                    AnomalyKind.PRELOAD_ENV_ACTIVE,
                    PRELOAD_VAR,
                    Confidence.CONFIRMED,
                    (Evidence("preload:env", f"{PRELOAD_VAR}={value}",
                              "variable absent from scanner environment"),),
                )
            )
        elif len(name) == len(PRELOAD_VAR) and name[1:] == PRELOAD_VAR[1:]:
            findings.append(
                Anomaly(
                    AnomalyKind.PRELOAD_ENV_ACTIVE,
                    name,
                    Confidence.SUSPICIOUS,
                    (Evidence("preload:env-rename", f"{name}={value}",
                              "no one-character rename of the preload variable"),),
                )
            )

    raw = view.preload_file()
    if raw is not None:
        entries = [
            line.strip()
            for line in raw.decode("utf-8", "replace").splitlines()
            if line.strip() and not line.strip().startswith("#")
        ]
        if entries:
            findings.append(
                Anomaly(
                    AnomalyKind.PRELOAD_FILE_ACTIVE,
                    PRELOAD_FILE,
                    Confidence.CONFIRMED,
                    (Evidence("preload:file", "; ".join(entries[:4]),
                              "empty or absent preload file"),),
                )
            )

    maps = view.self_maps()
    main_exe = next((m.path for m in maps if "x" in m.perms), None)
    for mapping in maps:
        if "x" not in mapping.perms:
            continue
        path = mapping.path
        if path == main_exe or path in _KERNEL_MAPPINGS:
            continue
        if any(path.startswith(p) for p in _LOADER_PREFIXES):
            continue
        if any(path.startswith(p) for p in allowlist if p):
            continue
        findings.append(
            Anomaly(
                AnomalyKind.UNEXPECTED_MAPPED_OBJECT,
                path,
                Confidence.SUSPICIOUS,
                (Evidence("preload:maps", f"executable mapping {path} ({mapping.perms})",
                          "only the main executable, loader and kernel pages"),),
            )
        )
    return findings


def audit_namespaces(view: SystemView, far_factor: int = 10) -> list[Anomaly]:
    """Namespace confinement traces.

    Three independent signals: the scanner's ns ids differing from pid 1's,
    the scanner holding an implausibly small pid while claiming to see a full
    system, and the listing being far below the kernel's global task counter
    (which no pid namespace filters).
    """
    findings: list[Anomaly] = []
    self_ns = view.self_namespaces()
    mine = {"ns/pid": self_ns.pid_ns, "ns/mnt": self_ns.mnt_ns, "ns/user": self_ns.user_ns}
    ns_evidence: list[Evidence] = []
    soft_evidence: list[Evidence] = []
    for name, own in mine.items():
        try:
            theirs = parse_ns_link(view.read_proc_file(1, name).decode("utf-8", "replace"))
        except (FileNotFoundError, PermissionError) as exc:
            soft_evidence.append(
                Evidence(f"namespaces:{name}", f"pid 1 link unreadable ({exc.__class__.__name__})",
                         "readable namespace link for pid 1")
            )
            continue
        except ValueError:
            ns_evidence.append(
                Evidence(f"namespaces:{name}", "unparseable namespace link for pid 1",
                         "type:[integer] form")
            )
            continue
        if theirs != own:
            ns_evidence.append(
                Evidence(f"namespaces:{name}", f"self {own} vs pid 1 {theirs}",
                         "identical namespace ids")
            )
    if ns_evidence:
        findings.append(
            Anomaly(AnomalyKind.NAMESPACE_MISMATCH, "namespaces",
                    Confidence.CONFIRMED, tuple(ns_evidence))
        )
    elif soft_evidence:
        findings.append(
            Anomaly(AnomalyKind.NAMESPACE_MISMATCH, "namespaces",
                    Confidence.SUSPICIOUS, tuple(soft_evidence))
        )

    listing = len(view.list_proc_pids())
    est = view.process_count_estimate()
    tol = view.count_tolerance(est)
    far = (est - listing > tol) and (est > listing * far_factor)
    self_pid = view.self_pid()
    if self_pid <= 2 and est > 4:
        findings.append(
            Anomaly(
                AnomalyKind.NAMESPACE_MISMATCH,
                "namespaces",
                Confidence.CONFIRMED if far else Confidence.SUSPICIOUS,
                (Evidence("namespaces:self-pid", f"scanner pid {self_pid}",
                          "ordinary pid for a full-system scanner"),),
            )
        )
    if far:
        findings.append(
            Anomaly(
                AnomalyKind.PROCESS_COUNT_MISMATCH,
                "process-count",
                Confidence.SUSPICIOUS if view.is_live else Confidence.CONFIRMED,
                (Evidence("namespaces:count", f"listing {listing}",
                          f"near the global task count {est}"),),
            )
        )
    return findings


def audit_proc_mount(view: SystemView) -> list[Anomaly]:
    """Is /proc the kernel's procfs, or something mounted to look like it?"""
    evidence: list[Evidence] = []
    entry = None
    for mnt in view.mounts():
        if mnt.mount_point == "/proc":
            entry = mnt
    if entry is None:
        evidence.append(Evidence("proc-mount:table", "no /proc mount entry",
                                 "a procfs mount on /proc"))
    else:
        if entry.fs_type != "proc":
            evidence.append(Evidence("proc-mount:fstype", entry.fs_type, "proc"))
        if entry.fs_magic != PROC_SUPER_MAGIC:
            evidence.append(
                Evidence("proc-mount:magic", hex(entry.fs_magic), hex(PROC_SUPER_MAGIC))
            )
        if "bind" in entry.flags:
            evidence.append(Evidence("proc-mount:flags", "bind mount", "a fresh procfs mount"))
    try:
        entries = view.list_dir("/proc")
    except OSError:
        entries = ()
    numeric = [e for e in entries if e.name.isdigit()]
    links = [e for e in numeric if e.kind is FileKind.SYMLINK]
    if numeric and links:
        evidence.append(
            Evidence("proc-mount:dirents",
                     f"{len(links)}/{len(numeric)} numeric entries are symlinks",
                     "numeric entries are directories")
        )
    if not evidence:
        return []
    return [Anomaly(AnomalyKind.PROC_MOUNT_SUSPICIOUS, "/proc", Confidence.CONFIRMED,
                    tuple(evidence))]


def audit_pid_max(view: SystemView, floor: int = 32_768) -> list[Anomaly]:
    """The pid ceiling: truncating it shrinks every sweep, so check it hard."""
    findings: list[Anomaly] = []
    try:
        pm = view.pid_max()
    except (FileNotFoundError, PermissionError) as exc:
        # a procfs without the ceiling file is not procfs
        return [
            Anomaly(
                AnomalyKind.PROC_MOUNT_SUSPICIOUS,
                "/proc",
                Confidence.CONFIRMED,
                (Evidence("pid-max:file", f"pid ceiling file unreadable ({exc.__class__.__name__})",
                          "readable pid ceiling under /proc/sys"),),
            )
        ]
    listing = view.list_proc_pids()
    top = max(listing, default=0)
    if top > pm:
        findings.append(
            Anomaly(
                AnomalyKind.PID_MAX_SUSPICIOUS,
                "pid-max",
                Confidence.CONFIRMED,
                (Evidence("pid-max:listed", f"pid {top} listed above ceiling {pm}",
                          "all pids at or below the ceiling"),),
            )
        )
    if pm < floor:
        findings.append(
            Anomaly(
                AnomalyKind.PID_MAX_SUSPICIOUS,
                "pid-max",
                Confidence.SUSPICIOUS,
                (Evidence("pid-max:floor", f"ceiling {pm}", f"at least {floor}"),),
            )
        )
    try:
        second = view.pid_max_second_path()
    except (FileNotFoundError, PermissionError) as exc:
        return findings + [
            Anomaly(
                AnomalyKind.PROC_MOUNT_SUSPICIOUS,
                "/proc",
                Confidence.CONFIRMED,
                (Evidence("pid-max:second-path",
                          f"pid ceiling file missing on re-read ({exc.__class__.__name__})",
                          "stable pid ceiling file"),),
            )
        ]
    if second is not None and second != pm:
        findings.append(
            Anomaly(
                AnomalyKind.PID_MAX_SUSPICIOUS,
                "pid-max",
                Confidence.CONFIRMED,
                (Evidence("pid-max:second-path", f"direct read {pm} vs ambient read {second}",
                          "identical values through both paths"),),
            )
        )
    return findings


def audit_tracer(
    view: SystemView,
    samples: int = 64,
    factor: float = 10.0,
    baseline_ns: float | None = None,
) -> list[Anomaly]:
    """Is someone tracing the scanner?

    TracerPid in the scanner's own status is a direct kernel statement and
    confirms. A refused self-trace and a syscall-latency outlier both stay
    suspicious: security supervisors and seccomp sandboxes produce the same
    refusal and comparable slowdowns without any tracer present.
    """
    findings: list[Anomaly] = []
    tp = view.self_tracer_pid()
    if tp != 0:
        findings.append(
            Anomaly(
                AnomalyKind.TRACER_PRESENT,
                "tracer",
                Confidence.CONFIRMED,
                (Evidence("tracer:status", f"TracerPid:\t{tp}", "TracerPid:\t0"),),
            )
        )
    allowed = view.self_trace_allowed()
    if allowed is False:
        findings.append(
            Anomaly(
                AnomalyKind.TRACER_PRESENT,
                "tracer",
                Confidence.SUSPICIOUS,
                (Evidence("tracer:self-trace", "self-trace attempt refused",
                          "self-trace permitted when untraced"),),
            )
        )
    base = baseline_ns if baseline_ns is not None else view.latency_baseline_ns()
    if base is not None and base > 0:
        med = view.syscall_latency_ns(samples)
        if med > base * factor:
            findings.append(
                Anomaly(
                    AnomalyKind.SYSCALL_LATENCY_OUTLIER,
                    "syscall-latency",
                    Confidence.SUSPICIOUS,
                    (Evidence("tracer:latency",
                              f"median {med:.0f}ns vs baseline {base:.0f}ns",
                              f"below {factor:.0f}x baseline"),),
                )
            )
    return findings


def audit_output_channel(state: DescriptorState) -> list[Anomaly]:
    """A scanner whose stdout is not a terminal may be feeding a filter."""
    if state.kind is DescriptorKind.TERMINAL:
        return []
    return [
        Anomaly(
            AnomalyKind.OUTPUT_NOT_TERMINAL,
            "stdout",
            Confidence.SUSPICIOUS,
            (Evidence("output:stdout", f"{state.kind.value} {state.peer}".strip(),
                      "a terminal"),),
        )
    ]


def audit_hidden_dirents(
    view: SystemView, path: str, candidates: tuple[str, ...] = ()
) -> list[Anomaly]:
    """Directory entries the enumeration hides.

    Two signals: the hard-link count of a directory exceeding what its
    visible subdirectories can explain (hiding a *file* leaves this count
    untouched — documented blind spot), and probe-by-name hits from an
    optional candidate list (stat answers for a name enumeration omits).
    """
    findings: list[Anomaly] = []
    entries = view.list_dir(path)
    visible_subdirs = sum(1 for e in entries if e.kind is FileKind.DIRECTORY)
    nlink = view.dir_nlink(path)
    if nlink - 2 > visible_subdirs:
        findings.append(
            Anomaly(
                AnomalyKind.HIDDEN_DIRENT,
                path,
                Confidence.CONFIRMED,
                (Evidence("dirents:nlink",
                          f"link count implies {nlink - 2} subdirectories, "
                          f"{visible_subdirs} visible",
                          "link count matching visible subdirectories"),),
            )
        )
    visible_names = {e.name for e in entries}
    for name in candidates:
        if name in visible_names:
            continue
        try:
            present = view.entry_exists(path, name)
        except OSError:
            continue
        if present:
            findings.append(
                Anomaly(
                    AnomalyKind.HIDDEN_DIRENT,
                    f"{path}/{name}",
                    Confidence.CONFIRMED,
                    (Evidence("dirents:probe-by-name",
                              f"{name} answers stat but is absent from enumeration",
                              "enumeration shows every stat-able name"),),
                )
            )
    return findings


AUDIT_NAMES = ("preload", "namespaces", "proc-mount", "pid-max", "tracer", "output", "dirents")


def run_audits(view: SystemView, cfg) -> tuple[list[Anomaly], list[str], list[str]]:
    """Run the audits cfg selects; failures become partial markers, never crashes."""
    anomalies: list[Anomaly] = []
    partial: list[str] = []
    ran: list[str] = []
    selected = set(cfg.audits)

    def _run(name: str, fn) -> None:
        if name not in selected:
            return
        if name not in ran:
            ran.append(name)
        try:
            anomalies.extend(fn())
        except (ViewUnavailable, OSError, ValueError) as exc:
            partial.append(f"audit:{name}: {exc}")

    _run("preload", lambda: audit_preload(view, cfg.mapped_allowlist))
    _run("namespaces", lambda: audit_namespaces(view, cfg.count_far_factor))
    _run("proc-mount", lambda: audit_proc_mount(view))
    _run("pid-max", lambda: audit_pid_max(view, cfg.pid_max_floor))
    _run("tracer", lambda: audit_tracer(view, cfg.latency_samples, cfg.latency_factor,
                                        cfg.latency_baseline_ns))
    _run("output", lambda: audit_output_channel(view.stdout_descriptor()))
    for path in cfg.audit_dirs:
        _run("dirents", lambda p=path: audit_hidden_dirents(
            view, p, tuple(cfg.dirent_candidates.get(p, ()))))
    return anomalies, partial, ran

"""Build and drive the statically linked inspection helper.

The live backend funnels every trusted operation through one small C
program (`probe_core.c`) compiled with `-static`: the produced binary has
no program interpreter and no dynamic section, so loader-level interposition
cannot reach it. This module compiles it on demand (cached under
``~/.cache/ghostscan``), verifies the static property, and exposes a
thread-safe line-protocol client.
"""
from __future__ import annotations

import base64
import hashlib
import shutil
import struct
import subprocess
import threading
from pathlib import Path

from ..types import ViewUnavailable

SOURCE = Path(__file__).with_name("probe_core.c")
_CACHE = Path.home() / ".cache" / "ghostscan"
_BUILD_LOCK = threading.Lock()

#: Probe kind indices, by position: must match the C switch in probe_core.c.
PROBE_ORDER = (
    "stat", "chdir", "opendir", "getpriority", "getpgid", "getsid",
    "kill0", "sched_getaffinity", "sched_getparam", "sched_getscheduler",
    "sched_rr_get_interval",
)

_PT_DYNAMIC = 2
_PT_INTERP = 3


def elf_dynamic_surface(path: Path) -> dict[str, bool]:
    """Inspect an ELF binary's program headers for loader involvement.

    Returns {'pt_interp': ..., 'pt_dynamic': ...}; a fully static binary has
    neither. Only 64-bit little-endian ELF is handled (the build targets).
    """
    data = path.read_bytes()
    if data[:4] != b"\x7fELF":
        raise ValueError(f"{path} is not an ELF binary")
    if data[4] != 2 or data[5] != 1:
        raise ValueError(f"{path}: only ELF64 little-endian is supported")
    e_phoff = struct.unpack_from("<Q", data, 0x20)[0]
    e_phentsize = struct.unpack_from("<H", data, 0x36)[0]
    e_phnum = struct.unpack_from("<H", data, 0x38)[0]
    found = {"pt_interp": False, "pt_dynamic": False}
    for i in range(e_phnum):
        p_type = struct.unpack_from("<I", data, e_phoff + i * e_phentsize)[0]
        if p_type == _PT_INTERP:
            found["pt_interp"] = True
        elif p_type == _PT_DYNAMIC:
            found["pt_dynamic"] = True
    return found


def _compiler() -> str:
    for cc in ("cc", "gcc", "clang"):
        path = shutil.which(cc)
        if path:
            return path
    raise ViewUnavailable("no C compiler found to build the inspection helper")


def helper_path() -> Path:
    """Location the helper builds to (content-addressed by source hash)."""
    digest = hashlib.sha256(SOURCE.read_bytes()).hexdigest()[:16]
    return _CACHE / f"probe_core-{digest}"


def build_helper(force: bool = False) -> Path:
    """Compile the helper if needed; returns the binary path.

    The build is content-addressed, so a source change produces a new binary
    and stale caches are never reused.
    """
    out = helper_path()
    with _BUILD_LOCK:
        if out.exists() and not force:
            return out
        _CACHE.mkdir(parents=True, exist_ok=True)
        tmp = out.with_suffix(".tmp")
        cmd = [_compiler(), "-O2", "-static", "-Wall", "-o", str(tmp), str(SOURCE)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ViewUnavailable(
                f"helper build failed: {' '.join(cmd)}\n{proc.stderr.strip()}"
            )
        surface = elf_dynamic_surface(tmp)
        if surface["pt_interp"] or surface["pt_dynamic"]:
            tmp.unlink(missing_ok=True)
            raise ViewUnavailable(
                "helper built with a dynamic-loader dependency; refusing to use it"
            )
        tmp.chmod(0o755)
        tmp.replace(out)
        return out


def _b64(path: str) -> str:
    return base64.b64encode(path.encode()).decode()


class ProbeCore:
    """Thread-safe client for one helper process."""

    def __init__(self, binary: Path | None = None):
        self._binary = binary or build_helper()
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            [str(self._binary)],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )

    def close(self) -> None:
        with self._lock:
            if self._proc.poll() is None:
                try:
                    self._proc.stdin.write(b"quit\n")
                    self._proc.stdin.flush()
                except (BrokenPipeError, OSError):
                    pass
                self._proc.terminate()
                self._proc.wait(timeout=5)

    def __del__(self):  # best effort; explicit close preferred
        try:
            self.close()
        except Exception:
            pass

    def _exchange(self, request: str, block: bool = False):
        """Send one request; return (tokens, extra_lines) under the lock.

        Block responses ("ok <count>" followed by <count> lines) are read in
        full inside the lock so concurrent callers cannot interleave.
        """
        with self._lock:
            if self._proc.poll() is not None:
                raise ViewUnavailable("inspection helper exited unexpectedly")
            self._proc.stdin.write(request.encode() + b"\n")
            self._proc.stdin.flush()
            first = self._proc.stdout.readline()
            if not first:
                raise ViewUnavailable("inspection helper closed its pipe")
            tokens = first.decode().split()
            extra: list[str] = []
            if block and tokens and tokens[0] == "ok":
                for _ in range(int(tokens[1])):
                    extra.append(self._proc.stdout.readline().decode())
            return tokens, extra

    def _simple(self, request: str) -> list[str]:
        tokens, _ = self._exchange(request)
        if not tokens:
            raise ViewUnavailable(f"empty helper response to {request!r}")
        if tokens[0] == "err":
            raise OSError(int(tokens[1]), f"helper: {request.split()[0]}")
        return tokens[1:]

    # -- operations -----------------------------------------------------------

    def ppid(self) -> int:
        return int(self._simple("ppid")[0])

    def pids(self) -> frozenset[int]:
        return frozenset(int(t) for t in self._simple("pids"))

    def dents(self, path: str) -> list[tuple[str, int, int]]:
        out = []
        for tok in self._simple(f"dents {_b64(path)}"):
            name_b64, ino, dtype = tok.rsplit(":", 2)
            name = base64.b64decode(name_b64).decode("utf-8", "surrogateescape")
            out.append((name, int(ino), int(dtype)))
        return out

    def read(self, path: str, max_bytes: int = 1 << 20) -> bytes:
        toks = self._simple(f"read {_b64(path)} {max_bytes}")
        return base64.b64decode(toks[0]) if toks else b""

    def rlink(self, path: str) -> str:
        toks = self._simple(f"rlink {_b64(path)}")
        return base64.b64decode(toks[0]).decode() if toks else ""

    def exists(self, path: str) -> bool:
        return self._simple(f"exists {_b64(path)}")[0] == "1"

    def nlink(self, path: str) -> int:
        return int(self._simple(f"nlink {_b64(path)}")[0])

    def ftype(self, path: str) -> int:
        """File type of `path` in d_type encoding (no symlink follow)."""
        return int(self._simple(f"ftype {_b64(path)}")[0])

    def magic(self, path: str) -> int:
        return int(self._simple(f"magic {_b64(path)}")[0])

    def pid_max(self) -> int:
        return int(self._simple("pidmax")[0])

    def task_count(self) -> int:
        return int(self._simple("taskcount")[0])

    def probe(self, pid: int, kind_index: int) -> int:
        """0 on success, else the errno the probe failed with."""
        return int(self._simple(f"probe {pid} {kind_index}")[0])

    def sweep(self, lo: int, hi: int, kind_indices: tuple[int, ...]) -> dict[int, tuple[int, ...]]:
        """Probe [lo, hi] x kinds; pids where any result is not no-entity."""
        mask = 0
        for k in kind_indices:
            mask |= 1 << k
        tokens, extra = self._exchange(f"sweep {lo} {hi} {mask}", block=True)
        if tokens[0] == "err":
            raise OSError(int(tokens[1]), "helper: sweep")
        hits: dict[int, tuple[int, ...]] = {}
        for line in extra:
            parts = line.split()
            hits[int(parts[0])] = tuple(int(p) for p in parts[1:])
        return hits

    def latency_ns(self, samples: int) -> int:
        return int(self._simple(f"latency {samples}")[0])

    def selftrace(self, pid: int) -> bool:
        return self._simple(f"selftrace {pid}")[0] == "1"

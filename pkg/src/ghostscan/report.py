"""Deterministic report rendering with a tamper-evident trailer.

Two renderings of the same ScanReport exist: a canonical text form (stable
line order, hidden pids as literal "Found HIDDEN PID:" blocks) and a machine
form (one JSON record per line, stable key order). Both end in an integrity
line carrying line count, byte count and a sha256 digest over everything
before it.

Tamper-EVIDENT, not tamper-proof: an adversary filtering the output stream
can delete findings, but cannot do so without breaking the trailer, and a
consumer holding only the text can check it. An adversary who rewrites the
trailer too wins — the trailer proves integrity only to a reader who trusts
nothing else about the channel but can recompute a hash.

On verification failure the reported offset is the earliest *provable*
divergence: with only counts and one digest, an arbitrary edit cannot be
localized exactly, so the offset is min(actual, attested) body length when
the lengths disagree and 0 when only the digest disagrees.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .types import (
    Anomaly,
    AnomalyKind,
    Confidence,
    DescriptorKind,
    DescriptorState,
    Evidence,
    MissingIntegrityLine,
    NamespaceIds,
)

FORMAT_VERSION = "v1"
DIGEST_NAME = "sha256"
_INTEGRITY_PREFIX = "integrity: "
_HIDDEN_PREFIX = "Found HIDDEN PID: "


@dataclass(frozen=True)
class ReportHeader:
    tool: str
    version: str
    scanner_pid: int
    parent_pid: int
    ns: NamespaceIds
    stdout: DescriptorState
    checks: tuple[str, ...]
    rounds: int
    min_pid: int
    pid_max: int
    started_ns: int
    finished_ns: int


@dataclass(frozen=True)
class Counters:
    pids_listed: int
    pids_swept: int
    probes_issued: int
    confirmed: int
    suspicious: int


@dataclass(frozen=True)
class ScanReport:
    header: ReportHeader
    anomalies: tuple[Anomaly, ...]
    counters: Counters
    partial: tuple[str, ...] = field(default_factory=tuple)

    @property
    def confirmed(self) -> tuple[Anomaly, ...]:
        return tuple(a for a in self.anomalies if a.confidence is Confidence.CONFIRMED)

    @property
    def hidden_pids(self) -> tuple[int, ...]:
        return tuple(
            a.subject
            for a in self.anomalies
            if a.kind is AnomalyKind.HIDDEN_FROM_LISTING and isinstance(a.subject, int)
        )


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    offset: int | None = None
    reason: str = ""


def _integrity_line(body: bytes) -> str:
    lines = body.count(b"\n")
    digest = hashlib.sha256(body).hexdigest()
    return (
        f"{_INTEGRITY_PREFIX}lines={lines} bytes={len(body)} "
        f"{DIGEST_NAME}={digest} (tamper-evident, not tamper-proof)"
    )


def _render_evidence(ev: Evidence) -> str:
    if ev.check == "cmdline":
        return f"\tCmdline: {ev.observed}"
    line = f"\t{ev.check}: {ev.observed}"
    if ev.expected:
        line += f" | expected: {ev.expected}"
    return line


def render_text(report: ScanReport) -> str:
    h = report.header
    ns = h.ns
    out = [
        f"format: {FORMAT_VERSION}",
        f"tool: {h.tool} {h.version}",
        f"scanner pid: {h.scanner_pid}",
        f"parent pid: {h.parent_pid}",
        f"self ns: pid:[{ns.pid_ns}] mnt:[{ns.mnt_ns}] user:[{ns.user_ns}]",
        f"stdout: {h.stdout.kind.value}:{h.stdout.peer}",
        f"checks: {','.join(h.checks)} rounds: {h.rounds}",
        f"pid range: [{h.min_pid}, {h.pid_max}]",
        f"started ns: {h.started_ns}",
        f"finished ns: {h.finished_ns}",
        f"pids listed: {report.counters.pids_listed}",
        f"pids swept: {report.counters.pids_swept}",
        f"probes issued: {report.counters.probes_issued}",
        f"partial: {','.join(report.partial) if report.partial else 'none'}",
        "",
    ]
    for a in report.anomalies:
        if a.kind is AnomalyKind.HIDDEN_FROM_LISTING and isinstance(a.subject, int):
            out.append(f"{_HIDDEN_PREFIX}{a.subject}")
        else:
            out.append(
                f"Finding: {a.kind.value} [{a.confidence.value}] subject: {a.subject}"
            )
        out.extend(_render_evidence(e) for e in a.evidence)
        out.append("")
    out.append(
        f"findings: {report.counters.confirmed} confirmed, "
        f"{report.counters.suspicious} suspicious"
    )
    body = ("\n".join(out) + "\n").encode()
    return (body + (_integrity_line(body) + "\n").encode()).decode()


# -- machine format ------------------------------------------------------------


def _anomaly_record(a: Anomaly) -> dict:
    return {
        "record": "anomaly",
        "kind": a.kind.value,
        "subject": a.subject,
        "confidence": a.confidence.value,
        "evidence": [[e.check, e.observed, e.expected] for e in a.evidence],
    }


def render_machine(report: ScanReport) -> str:
    h = report.header
    records: list[dict] = [
        {
            "record": "header",
            "format": FORMAT_VERSION,
            "tool": h.tool,
            "version": h.version,
            "scanner_pid": h.scanner_pid,
            "parent_pid": h.parent_pid,
            "ns": {"pid": h.ns.pid_ns, "mnt": h.ns.mnt_ns, "user": h.ns.user_ns},
            "stdout": {"kind": h.stdout.kind.value, "peer": h.stdout.peer},
            "checks": list(h.checks),
            "rounds": h.rounds,
            "min_pid": h.min_pid,
            "pid_max": h.pid_max,
            "started_ns": h.started_ns,
            "finished_ns": h.finished_ns,
            "partial": list(report.partial),
        }
    ]
    records.extend(_anomaly_record(a) for a in report.anomalies)
    records.append({"record": "counters", **asdict(report.counters)})
    body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records).encode()
    trailer = {
        "record": "integrity",
        "lines": body.count(b"\n"),
        "bytes": len(body),
        DIGEST_NAME: hashlib.sha256(body).hexdigest(),
    }
    return (body + (json.dumps(trailer, sort_keys=True) + "\n").encode()).decode()


def parse_machine(text: str) -> ScanReport:
    """Rebuild a ScanReport from its machine rendering (round-trips exactly)."""
    records = [json.loads(line) for line in text.splitlines() if line]
    header = None
    counters = None
    anomalies: list[Anomaly] = []
    partial: tuple[str, ...] = ()
    for r in records:
        if r["record"] == "header":
            header = ReportHeader(
                tool=r["tool"],
                version=r["version"],
                scanner_pid=r["scanner_pid"],
                parent_pid=r["parent_pid"],
                ns=NamespaceIds(r["ns"]["pid"], r["ns"]["mnt"], r["ns"]["user"]),
                stdout=DescriptorState(DescriptorKind(r["stdout"]["kind"]), r["stdout"]["peer"]),
                checks=tuple(r["checks"]),
                rounds=r["rounds"],
                min_pid=r["min_pid"],
                pid_max=r["pid_max"],
                started_ns=r["started_ns"],
                finished_ns=r["finished_ns"],
            )
            partial = tuple(r["partial"])
        elif r["record"] == "anomaly":
            anomalies.append(
                Anomaly(
                    kind=AnomalyKind(r["kind"]),
                    subject=r["subject"],
                    confidence=Confidence(r["confidence"]),
                    evidence=tuple(Evidence(*e) for e in r["evidence"]),
                )
            )
        elif r["record"] == "counters":
            counters = Counters(**{k: v for k, v in r.items() if k != "record"})
    if header is None or counters is None:
        raise MissingIntegrityLine("machine report lacks header or counters record")
    return ScanReport(header, tuple(anomalies), counters, partial)


# -- verification ----------------------------------------------------------------


def _split_trailer(text: str) -> tuple[bytes, str]:
    if not text.endswith("\n"):
        raise MissingIntegrityLine("report does not end with a newline")
    cut = text.rindex("\n", 0, len(text) - 1) + 1 if text.count("\n") > 1 else 0
    return text[:cut].encode(), text[cut:-1]


def _parse_trailer(last_line: str) -> tuple[int, int, str]:
    if last_line.startswith(_INTEGRITY_PREFIX):
        fields = dict(
            part.split("=", 1)
            for part in last_line[len(_INTEGRITY_PREFIX):].split(" ")
            if "=" in part
        )
        return int(fields["lines"]), int(fields["bytes"]), fields[DIGEST_NAME]
    try:
        rec = json.loads(last_line)
    except json.JSONDecodeError as exc:
        raise MissingIntegrityLine(f"unparseable integrity line: {last_line!r}") from exc
    if not isinstance(rec, dict) or rec.get("record") != "integrity":
        raise MissingIntegrityLine("final record is not an integrity record")
    return rec["lines"], rec["bytes"], rec[DIGEST_NAME]


def verify_integrity(text: str) -> VerifyResult:
    """Check a rendered report (text or machine form) against its trailer."""
    try:
        body, last = _split_trailer(text)
        lines, nbytes, digest = _parse_trailer(last)
    except (MissingIntegrityLine, ValueError, KeyError) as exc:
        return VerifyResult(False, offset=0, reason=f"missing integrity line: {exc}")
    if len(body) != nbytes:
        return VerifyResult(
            False,
            offset=min(len(body), nbytes),
            reason=f"byte count mismatch: attested {nbytes}, actual {len(body)}",
        )
    actual_lines = body.count(b"\n")
    if actual_lines != lines:
        return VerifyResult(
            False,
            offset=0,
            reason=f"line count mismatch: attested {lines}, actual {actual_lines}",
        )
    actual = hashlib.sha256(body).hexdigest()
    if actual != digest:
        return VerifyResult(False, offset=0, reason="digest mismatch")
    return VerifyResult(True)

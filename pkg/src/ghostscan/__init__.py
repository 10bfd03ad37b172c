"""ghostscan: cross-view detection of hidden processes.

A scanner that diffs what user-visible process enumeration shows against what
the kernel answers when asked directly, plus environment audits for the usual
concealment machinery (loader preloads, bound-over /proc, namespace games,
tracers) and an offline simulator for exercising every evasion the detector
is meant to catch — or documented to miss.
"""
__version__ = "0.1.0"

from .types import (  # noqa: F401
    Anomaly,
    AnomalyKind,
    Confidence,
    Evidence,
    ProbeKind,
    ProbeOutcome,
    Verdict,
)

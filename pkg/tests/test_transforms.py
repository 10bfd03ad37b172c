from dataclasses import replace

import pytest

from ghostscan.model import generate_model, make_dir_entries
from ghostscan.simview import SimulatedView
from ghostscan.testing import snapshot_channels, unexplained_diffs
from ghostscan.transforms import (
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
    VforkClaim,
    output_filters,
    validate_transforms,
)
from ghostscan.types import FileKind, InvalidTransform, ProbeKind

DIR = "/usr/lib/modules"


def rigged_model():
    base = generate_model(seed=7, size=60)
    entries = make_dir_entries(
        {
            "6.1.0-visible": FileKind.DIRECTORY,
            "6.1.0-rootkit": FileKind.DIRECTORY,
            "notes.txt": FileKind.REGULAR,
        }
    )
    return replace(
        base,
        directories={**base.directories, DIR: entries},
        env_of_scanner=base.env_of_scanner + ("LD_PRELOAD=/tmp/libknock.so",),
    )


def victim_of(model):
    return next(p for p in sorted(model.processes) if p not in (1, model.scanner_pid))


MODEL = rigged_model()
VICTIM = victim_of(MODEL)
ABSENT = next(p for p in range(2, 10_000) if p not in MODEL.processes)


class TestValidation:
    @pytest.mark.parametrize(
        "bad",
        [
            HideFromListing(ABSENT),
            HideFromListing(MODEL.scanner_pid),
            FailProbes(ABSENT),
            FailProbes(VICTIM, frozenset()),
            VforkClaim(ABSENT),
            GhostEntry(VICTIM),                       # ghosts must not exist
            GhostEntry(MODEL.pid_max + 5),            # outside the pid space
            PidMaxTruncated(1),
            PidMaxTruncated(MODEL.pid_max),           # does not truncate
            BindMountProc(MODEL.scanner_pid),
            BindMountProc(ABSENT),
            PidNamespaceSwap(frozenset({1})),         # scanner must stay visible
            PidNamespaceSwap(frozenset({MODEL.scanner_pid, ABSENT})),
            EnvStrip(""),
            EnvStrip("LD_PRELOAD=/tmp/x.so"),
            OutputFilter(""),
            OutputFilter("(unclosed"),
            TamperGetdents("/no/such/dir", "x"),
            TamperGetdents(DIR, "not-an-entry"),
            FakeTracerPid(-1),
        ],
        ids=lambda t: f"{t.__class__.__name__}-{hash(t) & 0xFFFF:04x}",
    )
    def test_invalid_configurations_are_rejected(self, bad):
        with pytest.raises(InvalidTransform):
            bad.validate(MODEL)

    def test_validate_transforms_walks_the_stack(self):
        good = HideFromListing(VICTIM)
        with pytest.raises(InvalidTransform):
            validate_transforms(MODEL, (good, GhostEntry(VICTIM)))
        validate_transforms(MODEL, (good,))

    def test_every_transform_declares_channels(self):
        for t in SINGLE_STACKS:
            assert t.channels(), t


SINGLE_STACKS = (
    HideFromListing(VICTIM),
    FailProbes(VICTIM, frozenset({ProbeKind.STAT, ProbeKind.KILL_ZERO})),
    FailProbes(VICTIM),
    VforkClaim(VICTIM),
    GhostEntry(ABSENT),
    PidMaxTruncated(max(2, max(MODEL.processes) // 2)),
    BindMountProc(VICTIM),
    PidNamespaceSwap(frozenset({1, MODEL.scanner_pid, VICTIM})),
    EnvStrip("LD_PRELOAD"),
    OutputFilter(r"hidden"),
    TamperGetdents(DIR, "6.1.0-rootkit"),
    FakeTracerPid(0),
)


@pytest.mark.parametrize("transform", SINGLE_STACKS, ids=lambda t: t.__class__.__name__)
def test_transforms_only_touch_their_declared_channels(transform):
    transform.validate(MODEL)
    sample = (1, VICTIM, MODEL.scanner_pid, ABSENT)
    clean = snapshot_channels(SimulatedView(MODEL, ()), sample, (DIR,))
    warped = snapshot_channels(SimulatedView(MODEL, (transform,)), sample, (DIR,))
    assert unexplained_diffs(clean, warped, transform.channels(), (DIR,)) == []


def test_transforms_actually_change_something():
    # every stack except the pure output filter must perturb the view
    sample = (1, VICTIM, MODEL.scanner_pid, ABSENT)
    clean = snapshot_channels(SimulatedView(MODEL, ()), sample, (DIR,))
    for transform in SINGLE_STACKS:
        warped = snapshot_channels(SimulatedView(MODEL, (transform,)), sample, (DIR,))
        changed = [k for k in clean if clean[k] != warped[k]]
        if isinstance(transform, OutputFilter):
            assert changed == []
        elif isinstance(transform, FakeTracerPid):
            # faking the already-true value of 0 is allowed to be a no-op on
            # the tracer channel but must stay silent everywhere else
            assert set(changed) <= {"tracer", "files:scanner"}
        else:
            assert changed, transform


class TestOutputFilter:
    def test_matching_lines_vanish(self):
        f = OutputFilter(r"HIDDEN PID: 7")
        text = "ok line\nFound HIDDEN PID: 7\nlast line\n"
        assert f.apply_to_text(text) == "ok line\nlast line\n"

    def test_non_matching_text_is_byte_identical(self):
        f = OutputFilter(r"never-matches")
        text = "a\r\nb\nno trailing newline"
        assert f.apply_to_text(text) == text

    def test_output_filters_selects_only_filters(self):
        stack = (HideFromListing(VICTIM), OutputFilter("x"), OutputFilter("y"))
        assert output_filters(stack) == (stack[1], stack[2])

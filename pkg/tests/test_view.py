import errno

import pytest

from ghostscan.types import ErrnoClass, ProbeKind, Verdict
from ghostscan.view import classify_errno, outcome_from_errno, parse_ns_link


@pytest.mark.parametrize(
    "err,cls",
    [
        (errno.ESRCH, ErrnoClass.NO_ENTITY),
        (errno.ENOENT, ErrnoClass.NO_ENTITY),
        (errno.EPERM, ErrnoClass.PERMISSION_DENIED),
        (errno.EACCES, ErrnoClass.PERMISSION_DENIED),
        (errno.EINVAL, ErrnoClass.OTHER),
        (errno.EIO, ErrnoClass.OTHER),
    ],
)
def test_errno_classification(err, cls):
    assert classify_errno(err) is cls


def test_outcome_mapping_preserves_verdict_invariants():
    absent = outcome_from_errno(ProbeKind.STAT, errno.ESRCH)
    assert absent.verdict is Verdict.ABSENT
    denied = outcome_from_errno(ProbeKind.KILL_ZERO, errno.EPERM)
    assert denied.verdict is Verdict.DENIED
    assert denied.proves_existence
    weird = outcome_from_errno(ProbeKind.GET_PGID, errno.ENOMEM)
    assert weird.verdict is Verdict.INCONCLUSIVE


@pytest.mark.parametrize(
    "text,expected",
    [
        ("pid:[4026531836]", 4026531836),
        ("mnt:[1]", 1),
        (" user:[4026534141] \n", 4026534141),
    ],
)
def test_ns_link_parses(text, expected):
    assert parse_ns_link(text) == expected


@pytest.mark.parametrize("text", ["", "pid:4026531836", "pid:[abc]", "bogus:[1]", "pid:[ ]"])
def test_ns_link_rejects_other_shapes(text):
    with pytest.raises(ValueError):
        parse_ns_link(text)

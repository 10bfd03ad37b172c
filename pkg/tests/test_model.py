import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostscan.model import (
    brute_oracle,
    ensure_process,
    generate_model,
    render_stat,
    render_status,
)
from ghostscan.types import ProcessState


@given(seed=st.integers(0, 2**32 - 1), size=st.integers(1, 400))
@settings(max_examples=40, deadline=None)
def test_generation_is_deterministic(seed, size):
    assert generate_model(seed=seed, size=size) == generate_model(seed=seed, size=size)


@given(seed=st.integers(0, 2**32 - 1), size=st.integers(1, 400))
@settings(max_examples=40, deadline=None)
def test_generated_shape(seed, size):
    m = generate_model(seed=seed, size=size)
    assert len(m.processes) == size
    assert 1 in m.processes
    assert m.scanner_pid in m.processes
    for pid, rec in m.processes.items():
        assert pid == rec.pid
        assert rec.pid <= m.pid_max
        if pid != 1:
            assert rec.ppid in m.processes


def test_oracle_is_the_process_table():
    m = generate_model(seed=9, size=123)
    assert brute_oracle(m) == frozenset(m.processes)


def test_size_bounds():
    with pytest.raises(ValueError):
        generate_model(seed=1, size=0)
    with pytest.raises(ValueError):
        generate_model(seed=1, size=5000, pid_max=4096)


def test_model_validation_rejects_broken_tables(model):
    rec = model.record(model.scanner_pid)
    with pytest.raises(ValueError):
        dataclasses.replace(model, processes={1: rec})  # key != record pid
    with pytest.raises(ValueError):
        dataclasses.replace(model, scanner_pid=model.pid_max - 1)


def test_ensure_process_adds_and_keeps():
    m = generate_model(seed=3, size=10)
    free = next(p for p in range(2, 1000) if p not in m.processes)
    m2 = ensure_process(m, free, comm="payload")
    assert free in m2.processes
    assert m2.record(free).comm == "payload"
    assert ensure_process(m2, free).processes == m2.processes


def test_rendered_proc_files_carry_kernel_fields(model):
    rec = model.record(model.scanner_pid)
    status = render_status(rec, tracer_pid=7).decode()
    lines = dict(
        line.split(":", 1) for line in status.splitlines() if ":" in line
    )
    assert lines["Name"].strip() == rec.comm
    assert int(lines["Tgid"]) == rec.pid
    assert int(lines["Pid"]) == rec.pid
    assert int(lines["PPid"]) == rec.ppid
    assert int(lines["TracerPid"]) == 7

    stat = render_stat(rec).decode()
    fields = stat.split()
    assert int(fields[0]) == rec.pid
    assert fields[1] == f"({rec.comm})"
    assert fields[2] == rec.state.value


def test_zombie_state_round_trips():
    m = generate_model(seed=3, size=10)
    pid = next(iter(m.processes))
    rec = dataclasses.replace(m.record(pid), state=ProcessState.ZOMBIE)
    assert render_stat(rec).decode().split()[2] == "Z"

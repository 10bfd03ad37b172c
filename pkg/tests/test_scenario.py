from pathlib import Path

import pytest

from ghostscan.scenario import (
    COLUMNS,
    Cell,
    CellOutcome,
    build_model,
    build_transforms,
    format_matrix,
    load_suite,
    parse_scenario,
    run_scenario,
)
from ghostscan.transforms import FailProbes, HideFromListing
from ghostscan.types import FS_PROBES, ProbeKind, ScenarioError

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "scenarios"

MINIMAL = """
name: inline
seed: 3
size: 30
target: 29000
extra_processes:
  - pid: 29000
    comm: miner
transforms:
  - kind: hide_from_listing
    pid: 29000
expected:
  proc: detects/attested
  sys: detects
  brute: detects
  count: detects
"""


class TestParsing:
    def test_minimal_document_round_trips(self):
        sc = parse_scenario(MINIMAL)
        assert sc.name == "inline"
        assert sc.target == 29000
        assert sc.expected["proc"] == Cell(CellOutcome.DETECTS, "attested")
        assert sc.expected["sys"] == Cell(CellOutcome.DETECTS, "derived")
        assert sc.expected["integrity"].outcome is CellOutcome.BLIND

    def test_name_hint_fills_missing_name(self):
        sc = parse_scenario("size: 10", name_hint="from-filename")
        assert sc.name == "from-filename"

    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("- a\n- b", "must be a mapping"),
            ("nonsense_key: 1", "unknown scenario keys"),
            ("expected:\n  nonsense: detects", "unknown matrix column"),
            ("expected:\n  proc: maybe", "unknown cell outcome"),
            ("expected:\n  proc: detects/rumoured", "unknown cell provenance"),
        ],
    )
    def test_malformed_documents_are_rejected(self, text, fragment):
        with pytest.raises(ScenarioError, match=fragment):
            parse_scenario(text)

    def test_unknown_transform_kind_is_rejected(self):
        sc = parse_scenario("transforms:\n  - kind: teleport\n    pid: 5")
        with pytest.raises(ScenarioError, match="unknown transform kind"):
            build_transforms(sc, build_model(sc))

    def test_probe_groups_resolve(self):
        sc = parse_scenario(
            "extra_processes:\n  - pid: 29000\n"
            "transforms:\n"
            "  - kind: fail_probes\n    pid: 29000\n    probes: fs\n"
            "  - kind: fail_probes\n    pid: 29000\n    probes: [kill0]\n"
        )
        fs, named = build_transforms(sc, build_model(sc))
        assert fs == FailProbes(29000, FS_PROBES)
        assert named == FailProbes(29000, frozenset({ProbeKind.KILL_ZERO}))

    def test_unknown_probe_group_is_rejected(self):
        sc = parse_scenario(
            "extra_processes:\n  - pid: 29000\n"
            "transforms:\n  - kind: fail_probes\n    pid: 29000\n    probes: psychic\n"
        )
        with pytest.raises(ScenarioError, match="unknown probe group"):
            build_transforms(sc, build_model(sc))


class TestModelBuilding:
    def test_extra_processes_and_target_exist(self):
        sc = parse_scenario(MINIMAL)
        model = build_model(sc)
        assert 29000 in model.processes
        assert model.processes[29000].comm == "miner"

    def test_transforms_land_on_the_model(self):
        sc = parse_scenario(MINIMAL)
        transforms = build_transforms(sc, build_model(sc))
        assert transforms == (HideFromListing(29000),)


class TestRunning:
    def test_inline_scenario_matches_its_row(self):
        result = run_scenario(parse_scenario(MINIMAL))
        assert result.ok, result.matrix_diff()
        assert result.observed["proc"].outcome is CellOutcome.DETECTS
        assert result.observed["integrity"].outcome is CellOutcome.BLIND

    def test_wrong_expectation_is_reported_not_hidden(self):
        sc = parse_scenario(MINIMAL.replace("proc: detects/attested", "proc: blind"))
        result = run_scenario(sc)
        assert not result.ok
        assert any(d.startswith("proc:") for d in result.diffs)
        assert "expected blind, got detects" in result.matrix_diff()

    def test_format_matrix_is_one_line_per_scenario(self):
        results = [run_scenario(parse_scenario(MINIMAL))]
        table = format_matrix(results)
        lines = table.splitlines()
        assert len(lines) == 2
        assert lines[0].split() == COLUMNS_HEADER
        assert lines[1].startswith("inline") and lines[1].endswith("ok")


COLUMNS_HEADER = [c[:7] for c in COLUMNS] + ["result"]


class TestShippedSuite:
    def test_suite_loads(self):
        suite = load_suite(SCENARIO_DIR)
        assert len(suite) >= 6
        names = [s.name for s in suite]
        assert len(names) == len(set(names))

    def test_every_shipped_scenario_matches(self):
        for sc in load_suite(SCENARIO_DIR):
            result = run_scenario(sc)
            assert result.ok, f"{sc.name}: {result.matrix_diff()}"

    def test_missing_directory_is_an_error(self, tmp_path):
        with pytest.raises(ScenarioError, match="no scenario files"):
            load_suite(tmp_path)

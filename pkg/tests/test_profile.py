from pathlib import Path

import pytest

from mlpart.profile import MissingRunsError, load_runs, mean_cuts, performance_profile

FIXTURE = Path(__file__).parent / "data" / "profile_3x10.csv"

# worked by hand from the cut matrix in the fixture
EXPECTED = {1.0: (0.8, 0.5, 0.2), 1.01: (0.8, 0.7, 0.2), 1.1: (0.9, 1.0, 0.3),
            2.0: (1.0, 1.0, 0.8)}


def rows(table):
    return [{"instance": i, "algorithm": a, "cut": c} for i, cuts in table.items()
            for a, c in cuts.items()]


def test_single_algorithm():
    prof = performance_profile(rows({"I1": {"A": 5}, "I2": {"A": 9}}))
    assert all(f == [1.0] for f in prof.fractions)


def test_two_algorithms():
    prof = performance_profile(rows({"I1": {"X": 10, "Y": 20}}), taus=[1.0, 2.0])
    assert prof.at(1.0) == {"X": 1.0, "Y": 0.0}
    assert prof.at(2.0) == {"X": 1.0, "Y": 1.0}


def test_fixture_fractions():
    prof = performance_profile(load_runs(FIXTURE), taus=list(EXPECTED))
    for tau, want in EXPECTED.items():
        assert tuple(prof.at(tau)[a] for a in "ABC") == want


def test_ties_count_for_all():
    prof = performance_profile(rows({"I": {"A": 3, "B": 3, "C": 4}}), taus=[1.0])
    assert prof.at(1.0) == {"A": 1.0, "B": 1.0, "C": 0.0}


def test_missing_pairs_listed():
    with pytest.raises(MissingRunsError) as err:
        performance_profile(rows({"I1": {"A": 1, "B": 2}, "I2": {"A": 1}}))
    assert err.value.missing == [("I2", "B")]


def test_mean_over_seeds_skips_aggregate():
    runs = [{"instance": "I", "algorithm": "A", "seed": s, "cut": c}
            for s, c in [(0, 10), (1, 13), ("mean", 999)]]
    assert float(mean_cuts(runs)[("I", "A")]) == 11.5


def test_tau_below_one():
    with pytest.raises(ValueError):
        performance_profile(rows({"I": {"A": 1}}), taus=[0.5])


def test_csv_roundtrip(tmp_path):
    prof = performance_profile(load_runs(FIXTURE), taus=[1.0, 2.0])
    prof.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "tau,A,B,C" and lines[2] == "2.0,1.000000,1.000000,0.800000"


def test_label_required(tmp_path):
    (tmp_path / "r.csv").write_text("instance,cut\nI,3\n")
    assert load_runs(tmp_path / "r.csv", "Z")[0]["algorithm"] == "Z"
    with pytest.raises(ValueError):
        load_runs(tmp_path / "r.csv")

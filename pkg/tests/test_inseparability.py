import csv
import itertools
import json
from importlib import resources

import numpy as np
import pytest

from cvcluster.circuit import CircuitParams
from cvcluster.exceptions import WitnessIntegrityError
from cvcluster.inseparability import (
    N_BIPARTITIONS,
    PINNED,
    WITNESS_FILE,
    Bipartition,
    VlfWitness,
    check_witness_table,
    enumerate_bipartitions,
    full_audit,
    load_witnesses,
    search_witnesses,
    vlf_lhs,
    vlf_rhs,
    witness_table_json,
)
from cvcluster.nullifiers import from_db
from cvcluster.sampler import sample_modes


def test_bipartitions_are_the_127_unordered_splits():
    bps = enumerate_bipartitions()
    assert len(bps) == N_BIPARTITIONS == 127
    seen = set()
    for bp in bps:
        assert bp.s1 and bp.s2 and not bp.s1 & bp.s2
        assert bp.s1 | bp.s2 == set(range(1, 9))
        seen.add(frozenset([bp.s1, bp.s2]))
    # oracle: every nonempty proper subset paired with its complement
    modes = range(1, 9)
    splits = {frozenset([frozenset(c), frozenset(set(modes) - set(c))])
              for m in range(1, 8) for c in itertools.combinations(modes, m)}
    assert seen == splits


@pytest.mark.parametrize("bid,f", [(51, 8), (15, 4), (20, 12)])
def test_worked_examples(bid, f):
    w = VlfWitness(PINNED[bid]["x"], PINNED[bid]["p"])
    assert vlf_rhs(Bipartition.from_id(bid), w) == f


def test_rhs_against_direct_sum():
    rng = np.random.default_rng(2)
    table = load_witnesses()
    for bid in rng.integers(1, 128, 20):
        bp = Bipartition.from_id(int(bid))
        w = table[int(bid)]
        s1 = sum(w.h[j - 1] * w.g[j - 1] for j in bp.s1)
        s2 = sum(w.h[j - 1] * w.g[j - 1] for j in bp.s2)
        assert vlf_rhs(bp, w) == abs(s1) + abs(s2)


def test_shipped_table_is_valid_and_reproducible():
    table = load_witnesses()
    check_witness_table(table)
    for bid, w in PINNED.items():
        assert table[bid] == VlfWitness(w["x"], w["p"])
    shipped = resources.files("cvcluster").joinpath("data", WITNESS_FILE).read_text()
    assert witness_table_json(search_witnesses()) == shipped


def test_every_witness_fires_below_3db():
    for bid, w in load_witnesses().items():
        assert w.required_db(Bipartition.from_id(bid)) >= -3.0103 - 1e-9


@pytest.mark.parametrize("db,expected", [(-3.5, 127), (-4.7, 127), (0.0, 0), (1.0, 0)])
def test_audit_thresholds(db, expected):
    v = from_db(db)
    assert full_audit((v, v)).n_violated == expected


def test_audit_on_circuit_params():
    assert full_audit(CircuitParams(r_a=0.5, r_b=0.5)).completely_inseparable
    assert full_audit(CircuitParams(r_a=0.0, r_b=0.0)).n_violated == 0


def test_audit_on_datasets(tmp_path):
    p = CircuitParams(n_circumference=4, n_temporal=16, r_a=0.8, r_b=0.8)
    src = {"x": sample_modes(p, 4000, "x", seed=1), "p": sample_modes(p, 4000, "p", seed=2)}
    report = full_audit(src)
    assert report.completely_inseparable
    # empirical lhs agrees with the analytic value
    w = load_witnesses()[20]
    assert vlf_lhs(w, src) == pytest.approx(vlf_lhs(w, p), rel=0.1)
    report.write_json(tmp_path / "a.json")
    report.write_csv(tmp_path / "a.csv")
    doc = json.loads((tmp_path / "a.json").read_text())
    assert len(list(csv.DictReader(open(tmp_path / "a.csv")))) == 127
    assert doc == json.loads(report.to_json())


def test_tampered_tables_are_rejected(tmp_path):
    text = resources.files("cvcluster").joinpath("data", WITNESS_FILE).read_text()
    doc = json.loads(text)
    bad = dict(doc, version=99)
    (tmp_path / "v.json").write_text(json.dumps(bad))
    with pytest.raises(WitnessIntegrityError):
        load_witnesses(tmp_path / "v.json")
    short = dict(doc, witnesses=doc["witnesses"][:-1])
    (tmp_path / "s.json").write_text(json.dumps(short))
    with pytest.raises(WitnessIntegrityError):
        load_witnesses(tmp_path / "s.json")
    table = load_witnesses()
    table[3] = VlfWitness([(1, 0, 0)], [(1, 5, 5)])
    with pytest.raises(WitnessIntegrityError):
        check_witness_table(table)


def test_witness_validation():
    with pytest.raises(WitnessIntegrityError):
        VlfWitness([], [(1, 0, 0)]).validate()
    with pytest.raises(WitnessIntegrityError):
        VlfWitness([(1, 0, 0), (2, 0, 0)], [(1, 0, 0)]).validate()

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdtree.core import Dataset
from cdtree.errors import DataError
from cdtree.stability import coassignment, feature_stability, jaccard_ssi, select_teacher
from cdtree.teachers import ForestParams, TeacherSpec

from oracles import ssi_literal

memberships = st.integers(1, 60).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 5), min_size=n, max_size=n),
                        st.lists(st.integers(0, 5), min_size=n, max_size=n)))


def test_coassignment_examples():
    assert np.array_equal(coassignment([0, 0, 0]), ~np.eye(3, dtype=bool))
    assert not coassignment([0, 1, 2]).any()
    c = coassignment([0, 0, 1, 1])
    assert set(zip(*np.nonzero(c))) == {(0, 1), (1, 0), (2, 3), (3, 2)}


def test_hand_example_exact():
    res = jaccard_ssi([0, 0, 1, 1], [0, 0, 0, 1])
    assert [Fraction(r).limit_denominator(100) for r in res.ratios] == [
        Fraction(1, 2), 0, Fraction(2, 7), 0]
    assert Fraction(res.ssi).limit_denominator(1000) == Fraction(11, 56)
    assert res.ssi == pytest.approx(11 / 56, abs=1e-15)


def test_identical_and_relabelled():
    m = [0, 0, 1, 2, 2, 2]
    assert jaccard_ssi(m, m).ssi == 1.0
    assert jaccard_ssi(m, [7, 7, 3, 5, 5, 5]).ssi == 1.0


def test_length_mismatch():
    with pytest.raises(DataError):
        jaccard_ssi([0, 1], [0, 1, 1])


@settings(max_examples=200, deadline=None)
@given(pair=memberships)
def test_matches_literal_pair_counting(pair):
    a, b = pair
    got = jaccard_ssi(a, b)
    want, ratios = ssi_literal(a, b)
    assert got.ssi == pytest.approx(want, abs=1e-12)
    assert np.allclose(got.ratios, ratios)


@settings(max_examples=200, deadline=None)
@given(pair=memberships)
def test_symmetric_bounded_and_one_iff_equal(pair):
    a, b = pair
    s = jaccard_ssi(a, b).ssi
    assert s == pytest.approx(jaccard_ssi(b, a).ssi, abs=1e-12)
    assert 0.0 <= s <= 1.0
    same = np.array_equal(coassignment(a), coassignment(b))
    assert (s == pytest.approx(1.0, abs=1e-12)) == same


def _step_data(n=300, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    x[:, 0] = np.where(x[:, 0] > 0, x[:, 0] + 2, x[:, 0] - 2)  # wide gap around zero
    z = rng.integers(0, 2, n)
    y = z * 3.0 * (x[:, 0] > 0)
    return Dataset(x, z, y)


def test_gap_signal_gives_stable_depth_one_splits():
    data = _step_data()
    res = select_teacher(data, [TeacherSpec(forest=ForestParams(n_trees=50))], depths=(1,),
                         B=10, seed=1)
    assert res.mean_ssi("t-forest", 1) > 0.99
    freq = feature_stability(res)["t-forest"]["1"]
    assert freq["X1"] == 1.0 and freq["X2"] == 0.0


def test_selection_outputs_and_determinism():
    data = _step_data(200, 2)
    specs = [TeacherSpec(forest=ForestParams(n_trees=30)),
             TeacherSpec(kind="noise", forest=ForestParams(n_trees=30))]
    a = select_teacher(data, specs, depths=(1, 2), B=4, seed=3, threads=1)
    b = select_teacher(data, specs, depths=(1, 2), B=4, seed=3, threads=3)
    assert a.to_csv() == b.to_csv()
    assert len(a.to_csv().splitlines()) == 1 + 2 * 2 * 4
    assert a.recommended == "t-forest"
    for t, per_depth in feature_stability(a).items():
        for freqs in per_depth.values():
            assert all(0.0 <= v <= 1.0 for v in freqs.values())
    summary = a.summary()
    assert {c["teacher"] for c in summary["cells"]} == {"t-forest", "noise"}


def test_selection_validation():
    data = _step_data(50)
    with pytest.raises(ValueError):
        select_teacher(data, [TeacherSpec()], B=1)
    with pytest.raises(ValueError):
        select_teacher(data, [TeacherSpec()], depths=(0,), B=2)


def test_depth_mismatch_flagged():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(60, 2))
    z = rng.integers(0, 2, 60)
    data = Dataset(x, z, np.zeros(60))  # constant teacher output: trees stay at the root
    res = select_teacher(data, [TeacherSpec(forest=ForestParams(n_trees=10))], depths=(2,),
                         B=3)
    assert res.mismatch_rate("t-forest", 2) == 1.0
    assert res.mean_ssi("t-forest", 2) == 1.0


@pytest.mark.slow
def test_noiseless_two_feature_frequency():
    from cdtree.simulation import DgpConfig, gen_dataset
    data, _, _ = gen_dataset(DgpConfig("additive", n=500, pve=1.0, seed=11))
    res = select_teacher(data, [TeacherSpec(forest=ForestParams(n_trees=200))], depths=(2,),
                         B=30, seed=2)
    freq = feature_stability(res)["t-forest"]["2"]
    assert freq["X1"] >= 0.9 and freq["X2"] >= 0.9

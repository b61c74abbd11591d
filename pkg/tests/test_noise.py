from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagnoise.dataset import ClipRecord, Manifest, binarize
from tagnoise.noise import (
    InvalidInput, corrupt_labels, corruption_count, shuffle_labels, sweep_plan,
)


def make(sets, source="curated"):
    return Manifest([ClipRecord(f"c{i:04d}", f"a/{i}.wav", t, source) for i, t in enumerate(sets)])


def random_manifest(n, seed=0):
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(n):
        k = 1 + int(rng.random() < 0.2)
        sets.append(frozenset(rng.choice(12, size=k, replace=False).tolist()))
    return make(sets)


tag_sets = st.frozensets(st.integers(0, 11), min_size=1, max_size=4)


def test_sweep_plan():
    rs = sweep_plan()
    assert len(rs) == 21 and rs[0] == 0 and rs[-1] == 100
    assert sweep_plan(0, 0, 5) == [0]
    assert sweep_plan(0, 10, 5) == [0, 5, 10]
    with pytest.raises(InvalidInput):
        sweep_plan(0, 10, 3)
    with pytest.raises(InvalidInput):
        sweep_plan(0, 10, 0)


@pytest.mark.parametrize("r,n,expected", [(70, 100, 70), (50, 1, 1), (25, 2, 1), (5, 10, 1),
                                          (15, 10, 2), (0, 825, 0), (100, 825, 825), (5, 825, 41)])
def test_corruption_count_rounds_half_away(r, n, expected):
    # 5% of 825 is 41.25; 5% of 10 is 0.5 -> 1; 15% of 10 is 1.5 -> 2
    assert corruption_count(r, n) == expected


def test_r70_alters_exactly_70():
    m = random_manifest(100)
    out, plan = corrupt_labels(m, 70, np.random.default_rng(0))
    changed = [a.id for a, b in zip(m, out) if a.tags != b.tags]
    assert len(changed) == 70 == len(plan.affected_ids)
    assert set(changed) == plan.affected_ids


def test_r0_is_identity():
    m = random_manifest(50)
    out, plan = corrupt_labels(m, 0, np.random.default_rng(0))
    assert out == m and not plan.replacements


def test_single_tag_clip_gets_a_different_single_tag():
    m = make([{4}])
    out, plan = corrupt_labels(m, 100, np.random.default_rng(1))
    (tags,) = [r.tags for r in out]
    assert len(tags) == 1 and tags != {4}
    assert plan.replacements["c0000"][0] == 4


def test_full_tag_clip_cannot_be_corrupted():
    with pytest.raises(InvalidInput):
        corrupt_labels(make([set(range(12))]), 100, np.random.default_rng(0))


def test_rate_bounds():
    with pytest.raises(InvalidInput):
        corrupt_labels(make([{1}]), 101, np.random.default_rng(0))


@given(st.lists(tag_sets, min_size=1, max_size=40), st.integers(0, 100), st.integers(0, 2**32))
def test_corruption_invariants(sets, r, seed):
    m = make(sets)
    out, plan = corrupt_labels(m, r, np.random.default_rng(seed), seed=seed)
    assert len(plan.affected_ids) == corruption_count(r, len(m))
    assert binarize(out).sum() == binarize(m).sum()
    for before, after in zip(m, out):
        assert before.id == after.id and before.audio_ref == after.audio_ref
        if before.id in plan.affected_ids:
            removed, inserted = plan.replacements[before.id]
            assert len(before.tags ^ after.tags) == 2
            assert removed in before.tags and inserted not in before.tags
            assert after.tags == (before.tags - {removed}) | {inserted}
        else:
            assert before == after


def test_r100_every_clip_has_one_wrong_tag():
    m = random_manifest(200, seed=3)
    out, _ = corrupt_labels(m, 100, np.random.default_rng(0))
    assert all(len(b.tags - a.tags) == 1 for a, b in zip(m, out))


def test_corruption_is_deterministic():
    m = random_manifest(100)
    a = corrupt_labels(m, 35, np.random.default_rng(9), seed=9)
    b = corrupt_labels(m, 35, np.random.default_rng(9), seed=9)
    assert a == b


def test_plan_audit_csv(tmp_path):
    m = make([{0}, {1, 2}])
    _, plan = corrupt_labels(m, 100, np.random.default_rng(0))
    text = plan.to_csv()
    lines = text.splitlines()
    assert lines[0] == "id,removed,inserted"
    assert len(lines) == 3
    plan.save(tmp_path / "plan.csv")
    assert (tmp_path / "plan.csv").read_text() == text


def test_shuffle_single_clip_identity():
    m = make([{3}])
    assert shuffle_labels(m, np.random.default_rng(0)) == m


@given(st.lists(tag_sets, min_size=1, max_size=40), st.integers(0, 2**32))
def test_shuffle_preserves_label_multiset(sets, seed):
    m = make(sets)
    out = shuffle_labels(m, np.random.default_rng(seed))
    assert Counter(r.tags for r in out) == Counter(r.tags for r in m)
    assert np.array_equal(binarize(out).sum(axis=0), binarize(m).sum(axis=0))
    assert [r.id for r in out] == [r.id for r in m]
    assert [r.audio_ref for r in out] == [r.audio_ref for r in m]


def test_shuffle_rejects_empty():
    with pytest.raises(InvalidInput):
        shuffle_labels(Manifest([]), np.random.default_rng(0))

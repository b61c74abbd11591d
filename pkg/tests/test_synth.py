import numpy as np
import pytest

from tagnoise.dataset import binarize, load_manifest
from tagnoise.dsp import compute_features, read_wav
from tagnoise.evaluation import roc_auc
from tagnoise.synth import SynthSpec, plan_split, synth_corpus, synth_split

SMALL = SynthSpec(clips_per_class=4, noisy_per_class=4, test_per_class=3)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return out, synth_corpus(SMALL, seed=5, out_dir=out)


def test_split_sizes_and_disjoint_ids(corpus):
    _, ms = corpus
    assert {k: len(m) for k, m in ms.items()} == {"curated_train": 48, "noisy_train": 48, "test": 36}
    ids = [set(m.ids) for m in ms.values()]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    assert {r.source for r in ms["noisy_train"]} == {"noisy"}
    assert ms["test"].split_role == "test"


def test_every_class_tagged_at_least_per_class_times(corpus):
    _, ms = corpus
    assert np.all(binarize(ms["curated_train"]).sum(axis=0) >= 4)


def test_written_files_reload(corpus):
    out, ms = corpus
    for split, m in ms.items():
        role = "test" if split == "test" else "train"
        assert load_manifest(out / f"{split}.csv", split_role=role) == m
    for r in ms["test"]:
        w = read_wav(out / r.audio_ref)
        assert w.sample_rate == 16000
        assert 1.0 - 1 / 16000 <= w.duration <= 8.0 + 1 / 16000


def test_same_seed_gives_identical_bytes(tmp_path):
    spec = SynthSpec(clips_per_class=1, noisy_per_class=1, test_per_class=1)
    synth_corpus(spec, seed=2, out_dir=tmp_path / "a")
    synth_corpus(spec, seed=2, out_dir=tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_noisy_split_has_label_noise_and_durations():
    plans = plan_split(SynthSpec(noisy_per_class=100), 0, "noisy_train")
    flipped = np.mean([true != obs for _, true, obs, _, _ in plans])
    assert 0.45 < flipped < 0.55
    durations = [d for _, _, _, d, _ in plans]
    assert min(durations) >= 1.0 and max(durations) <= 8.0
    two = np.mean([len(t) == 2 for _, t, _, _, _ in plans])
    assert 0.15 < two < 0.25


def test_curated_features_are_separable():
    # leave-one-out nearest centroid on mean mel vectors: a clip is scored by
    # its distance to the class centroid computed without it
    m, waves = synth_split(SynthSpec(), 0, "curated_train", keep_audio=True)
    feats = np.array([compute_features(waves[r.id]).values.mean(axis=0) for r in m])
    y = binarize(m)
    for c in range(12):
        pos = y[:, c] == 1
        total, k = feats[pos].sum(axis=0), pos.sum()
        centroids = np.where(pos[:, None], (total - feats) / (k - 1), total / k)
        score = -np.linalg.norm(feats - centroids, axis=1)
        assert roc_auc(score, y[:, c]) > 0.8, c

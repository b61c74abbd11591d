"""Training-label perturbations: the shuffled-label baseline and r% single-tag corruption."""
import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor

import numpy as np

from .dataset import TagVocabulary
from .errors import InvalidInput


@dataclass(frozen=True)
class CorruptionPlan:
    r: float
    seed: int
    n_clips: int
    # clip id -> (removed tag, inserted tag), in manifest order
    replacements: dict = field(default_factory=dict)

    @property
    def affected_ids(self):
        return frozenset(self.replacements)

    def to_csv(self, vocab=TagVocabulary()):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "removed", "inserted"])
        for cid, (removed, inserted) in self.replacements.items():
            w.writerow([cid, vocab.names[removed], vocab.names[inserted]])
        return buf.getvalue()

    def save(self, path, vocab=TagVocabulary()):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv(vocab))


def corruption_count(r, n):
    """round(r * n / 100) with halves rounded away from zero, computed exactly."""
    x = Fraction(r) * n / 100
    return floor(x + Fraction(1, 2))


def shuffle_labels(m, rng):
    """Reassign the manifest's tag sets to clips by a uniform random permutation."""
    if len(m) == 0:
        raise InvalidInput("cannot shuffle an empty manifest")
    perm = rng.permutation(len(m))
    return m.with_tags([m.records[i].tags for i in perm])


def corrupt_labels(m, r, rng, seed=None, n_classes=12):
    """Swap exactly one tag for a wrong one in round(r% * n) uniformly chosen clips.

    The removed tag is uniform over the clip's tags; the inserted tag is
    uniform over classes outside the clip's original tag set, so every
    affected clip keeps its tag count and ends up with exactly one wrong tag.
    """
    if not 0 <= r <= 100:
        raise InvalidInput(f"corruption rate must be within [0, 100], got {r}")
    n = len(m)
    k = corruption_count(r, n)
    chosen = np.sort(rng.choice(n, size=k, replace=False)) if k else np.array([], dtype=int)
    new_tags = [rec.tags for rec in m.records]
    replacements = {}
    for i in chosen:
        rec = m.records[i]
        if len(rec.tags) >= n_classes:
            raise InvalidInput(f"clip {rec.id!r} carries all {n_classes} tags; no wrong tag to insert")
        current = sorted(rec.tags)
        removed = current[int(rng.integers(len(current)))]
        complement = [c for c in range(n_classes) if c not in rec.tags]
        inserted = complement[int(rng.integers(len(complement)))]
        new_tags[i] = (rec.tags - {removed}) | {inserted}
        replacements[rec.id] = (removed, inserted)
    plan = CorruptionPlan(r=r, seed=seed, n_clips=n, replacements=replacements)
    return m.with_tags(new_tags), plan


def sweep_plan(r_start=0, r_end=100, step=5):
    if step <= 0 or r_end < r_start or (r_end - r_start) % step:
        raise InvalidInput(f"step {step} must be positive and divide {r_end} - {r_start}")
    return list(range(r_start, r_end + 1, step))

"""Clip manifests, the tag vocabulary and label matrices."""
import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from .errors import InvalidInput

SOURCES = ("curated", "noisy")
ROLES = ("train", "test")
MANIFEST_HEADER = ["id", "path", "tags", "source"]

DEFAULT_CLASSES = (
    "Acoustic_guitar", "Bass_guitar", "Strum", "Piano", "Organ", "Harmonica",
    "Accordion", "Flute", "Trumpet", "Glockenspiel", "Male_singing", "Female_singing",
)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class TagVocabulary:
    names: tuple = DEFAULT_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != 12:
            raise ManifestError(f"vocabulary must have exactly 12 classes, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise ManifestError("vocabulary names must be unique")

    def __len__(self):
        return len(self.names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    def save(self, path):
        Path(path).write_text("".join(f"{n}\n" for n in self.names), encoding="utf-8")


@dataclass(frozen=True)
class ClipRecord:
    id: str
    audio_ref: str
    tags: frozenset
    source: str

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(int(t) for t in self.tags))
        if not self.tags:
            raise ManifestError(f"clip {self.id!r} has no tags")
        if any(not 0 <= t < 12 for t in self.tags):
            raise ManifestError(f"clip {self.id!r} has tag indices outside [0, 12)")
        if self.source not in SOURCES:
            raise ManifestError(f"clip {self.id!r}: unknown source {self.source!r}")


@dataclass(frozen=True)
class Manifest:
    records: tuple
    split_role: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.split_role not in ROLES:
            raise ManifestError(f"unknown split role {self.split_role!r}")
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise ManifestError(f"duplicate clip id {r.id!r}")
            seen.add(r.id)
        if self.split_role == "test":
            bad = [r.id for r in self.records if r.source != "curated"]
            if bad:
                raise ManifestError(f"test manifest contains non-curated clips: {bad[:5]}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self):
        return [r.id for r in self.records]

    def with_tags(self, tag_sets):
        """Same clips in the same order with replaced tag sets."""
        recs = [replace(r, tags=frozenset(t)) for r, t in zip(self.records, tag_sets, strict=True)]
        return Manifest(recs, self.split_role)


def parse_manifest(text, vocab=TagVocabulary(), split_role="train", origin="<manifest>"):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError(f"{origin}: empty manifest") from None
    if [h.strip() for h in header] != MANIFEST_HEADER:
        raise ManifestError(f"{origin}: header must be {','.join(MANIFEST_HEADER)}")
    records = []
    seen = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ManifestError(f"{origin}:{lineno}: expected 4 fields, got {len(row)}")
        cid, path, tags, source = (f.strip() for f in row)
        if cid in seen:
            raise ManifestError(
                f"{origin}:{lineno}: duplicate clip id {cid!r} (first seen on line {seen[cid]})"
            )
        seen[cid] = lineno
        names = [t.strip() for t in tags.split(";") if t.strip()]
        if not names:
            raise ManifestError(f"{origin}:{lineno}: clip {cid!r} has an empty tag list")
        idx = set()
        for name in names:
            try:
                idx.add(vocab.index(name))
            except KeyError:
                raise ManifestError(
                    f"{origin}:{lineno}: clip {cid!r} has unknown tag {name!r}"
                ) from None
        if source not in SOURCES:
            raise ManifestError(f"{origin}:{lineno}: clip {cid!r} has unknown source {source!r}")
        records.append(ClipRecord(cid, path, frozenset(idx), source))
    return Manifest(records, split_role)


def load_manifest(path, vocab=TagVocabulary(), split_role="train"):
    text = Path(path).read_text(encoding="utf-8")
    return parse_manifest(text, vocab, split_role, origin=str(path))


def format_manifest(m, vocab=TagVocabulary()):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for r in m.records:
        w.writerow([r.id, r.audio_ref, ";".join(vocab.names[t] for t in sorted(r.tags)), r.source])
    return buf.getvalue()


def save_manifest(m, path, vocab=TagVocabulary()):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_manifest(m, vocab))


def binarize(m, vocab=TagVocabulary()):
    """n_clips x 12 {0,1} matrix with a one at (i, c) iff clip i carries tag c."""
    y = np.zeros((len(m), len(vocab)), dtype=np.float64)
    for i, r in enumerate(m.records):
        y[i, sorted(r.tags)] = 1.0
    return y


def tag_sets_from_matrix(y):
    return [frozenset(np.flatnonzero(row).tolist()) for row in np.asarray(y)]


def subsample(m, n, rng):
    """``n`` records drawn uniformly without replacement, kept in manifest order."""
    if not 0 <= n <= len(m):
        raise InvalidInput(f"cannot draw {n} records from a manifest of {len(m)}")
    pick = np.sort(rng.choice(len(m), size=n, replace=False))
    return Manifest([m.records[i] for i in pick], m.split_role)


def tag_stats(m):
    if len(m) == 0:
        raise InvalidInput("tag statistics need a non-empty manifest")
    return sum(len(r.tags) for r in m.records) / len(m)

"""Adam training loop, learning-rate schedule and seeded multi-run suites.

Every random decision of a run comes from a generator derived from the run
seed plus a fixed stream id, so runs are reproducible and independent of
batch size and of the order in which clips are visited:

    init      default_rng([seed, 0])
    shuffle   default_rng([seed, 1, epoch])
    snippet   default_rng([seed, 2, epoch, crc32(clip id)])   epoch = 0 for "fixed"
    dropout   default_rng([seed, 3, epoch])
"""
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import canon
from .dataset import binarize
from .dsp import (
    SAMPLE_RATE, SNIPPET_SAMPLES, circular_pad, compute_features, extract_snippet,
    load_features, n_frames, read_wav, resample, save_features,
)
from .errors import InvalidInput
from .evaluation import evaluate
from .nncore import bce_loss
from .tagger import DESK_CONFIG, TaggerConfig, build, save_model

log = logging.getLogger(__name__)

STREAM_INIT, STREAM_SHUFFLE, STREAM_SNIPPET, STREAM_DROPOUT = range(4)
SNIPPET_FRAMES = n_frames(SNIPPET_SAMPLES)


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    lr_drop_epoch: int = 80
    total_epochs: int = 100
    drop_factor: float = 10.0
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seeds: tuple = (0, 1, 2, 3, 4)
    snippet_policy: str = "per_epoch"   # per_epoch | fixed
    snippet_offsets: str = "sample"     # sample | hop
    strict_deterministic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.total_epochs < 1:
            raise InvalidInput("total_epochs must be positive")
        if not 0 <= self.lr_drop_epoch < self.total_epochs:
            raise InvalidInput(
                f"lr_drop_epoch {self.lr_drop_epoch} must lie in [0, {self.total_epochs})"
            )
        if self.batch_size < 2:
            raise InvalidInput("batch_size must be at least 2 for batch norm")
        if self.lr0 <= 0 or self.drop_factor <= 0:
            raise InvalidInput("lr0 and drop_factor must be positive")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidInput(f"seeds must be distinct, got {self.seeds}")
        if self.snippet_policy not in ("per_epoch", "fixed"):
            raise InvalidInput(f"unknown snippet_policy {self.snippet_policy!r}")
        if self.snippet_offsets not in ("sample", "hop"):
            raise InvalidInput(f"unknown snippet_offsets {self.snippet_offsets!r}")

    def to_text(self):
        return canon.dumps({k: list(v) if isinstance(v, tuple) else v
                            for k, v in asdict(self).items()})

    @classmethod
    def from_text(cls, text):
        return cls(**canon.loads(text))


FULL_PRESET = TrainConfig()
# 30 epochs with the drop at the same 80% mark; snippets start on STFT hop
# boundaries so they can be sliced out of cached whole-clip features.
DESK_PRESET = TrainConfig(lr_drop_epoch=24, total_epochs=30, batch_size=16, snippet_offsets="hop")
PRESETS = {"desk": (DESK_PRESET, DESK_CONFIG), "full": (FULL_PRESET, TaggerConfig())}


def lr_schedule(epoch, config=FULL_PRESET):
    """Step schedule: lr0 before ``lr_drop_epoch``, lr0 / drop_factor from there on."""
    if not 0 <= epoch < config.total_epochs:
        raise InvalidInput(f"epoch {epoch} outside [0, {config.total_epochs})")
    return config.lr0 if epoch < config.lr_drop_epoch else config.lr0 / config.drop_factor


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on the arrays of ``params``.

    ``params`` and ``grads`` map names to arrays; ``state.t`` counts steps
    already taken. Non-finite gradients abort before anything is modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise InvalidInput(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise InvalidInput(f"{name}: gradient shape {np.shape(g)} != {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class FeatureStore:
    """Whole-clip features for manifest records, memoised and optionally cached on disk.

    Clips shorter than one snippet are circularly padded to 3 s before
    feature extraction. Features are kept as float32, the precision of the
    on-disk cache, so cached and fresh runs see identical inputs.
    """

    def __init__(self, root, cache_dir=None):
        self.root = Path(root)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._mem = {}

    def waveform(self, record):
        w = read_wav(self.root / record.audio_ref)
        return resample(w, SAMPLE_RATE)

    def features(self, record):
        key = record.audio_ref
        hit = self._mem.get(key)
        if hit is not None:
            return hit
        path = None
        if self.cache_dir is not None:
            path = self.cache_dir / (Path(key).with_suffix(".feat"))
            if path.exists():
                values = load_features(path).values.astype(np.float32)
                self._mem[key] = values
                return values
        mel = compute_features(circular_pad(self.waveform(record), SNIPPET_SAMPLES))
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_features(path, mel)
        values = mel.values.astype(np.float32)
        self._mem[key] = values
        return values


def _clip_stream(seed, epoch, clip_id):
    return np.random.default_rng([seed, STREAM_SNIPPET, epoch, zlib.crc32(clip_id.encode())])


def snippet_features(store, record, seed, epoch, config):
    """The (90, 96) training input for ``record`` in ``epoch`` of run ``seed``."""
    draw_epoch = epoch if config.snippet_policy == "per_epoch" else 0
    rng = _clip_stream(seed, draw_epoch, record.id)
    if config.snippet_offsets == "hop":
        full = store.features(record)
        start = int(rng.integers(0, full.shape[0] - SNIPPET_FRAMES + 1))
        return full[start:start + SNIPPET_FRAMES].astype(np.float64)
    w = extract_snippet(store.waveform(record), rng)
    return compute_features(w).values.astype(np.float32).astype(np.float64)


def batches(n, batch_size, rng):
    """Shuffled index batches; a trailing batch of one clip is dropped."""
    order = rng.permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out[-1]) < 2:
        out.pop()
    return out


@dataclass
class RunResult:
    seed: int
    loss_trace: list
    steps: int
    report: object = None
    checkpoint: Path = None
    model: object = field(default=None, repr=False)

    @property
    def map(self):
        return self.report.map

    @property
    def mauc(self):
        return self.report.mauc


def predict_manifest(model, store, manifest):
    """Eval-mode scores for every clip of ``manifest`` from its whole-clip features."""
    model.eval()
    rows = [model.predict(store.features(r).astype(np.float64)[None, None])[0] for r in manifest]
    return np.vstack(rows)


def evaluate_model(model, store, manifest, vocab=None, skip_degenerate=False):
    scores = predict_manifest(model, store, manifest)
    names = vocab.names if vocab is not None else ()
    return evaluate(scores, binarize(manifest), names, skip_degenerate)


def train_run(manifest, store, config, seed, tagger_config=DESK_CONFIG, test=None, vocab=None,
              progress=None):
    """Train one model from scratch and, when ``test`` is given, score it."""
    n = len(manifest)
    if n < 2:
        raise InvalidInput(f"training needs at least 2 clips, got {n}")
    model = build(tagger_config, init_seed=[seed, STREAM_INIT]).train()
    params = {t.name: t.data for t in model.params}
    state = AdamState()
    y_all = binarize(manifest)
    records = manifest.records
    trace = []
    prefetch = None if config.strict_deterministic else ThreadPoolExecutor(max_workers=1)

    def assemble(idx, epoch):
        x = np.stack([snippet_features(store, records[i], seed, epoch, config) for i in idx])
        return x[:, None], y_all[idx]

    try:
        for epoch in range(config.total_epochs):
            lr = lr_schedule(epoch, config)
            plan = batches(n, config.batch_size, np.random.default_rng([seed, STREAM_SHUFFLE, epoch]))
            drop_rng = np.random.default_rng([seed, STREAM_DROPOUT, epoch])
            total, seen = 0.0, 0
            pending = prefetch.submit(assemble, plan[0], epoch) if prefetch else None
            for b, idx in enumerate(plan):
                if prefetch:
                    x, y = pending.result()
                    if b + 1 < len(plan):
                        pending = prefetch.submit(assemble, plan[b + 1], epoch)
                else:
                    x, y = assemble(idx, epoch)
                model.params.zero_grad()
                loss = bce_loss(model.forward(x, drop_rng), y)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingAborted(f"seed {seed}: non-finite loss at epoch {epoch}, batch {b}")
                loss.backward()
                grads = {t.name: t.grad for t in model.params if t.grad is not None}
                adam_step(params, grads, state, lr, config.beta1, config.beta2, config.eps)
                total += value * len(idx)
                seen += len(idx)
            trace.append(total / seen)
            if progress:
                progress(seed, epoch, trace[-1])
    finally:
        if prefetch:
            prefetch.shutdown()
    model.eval()
    report = evaluate_model(model, store, test, vocab) if test is not None else None
    return RunResult(seed=seed, loss_trace=trace, steps=state.t, report=report, model=model)


def write_run(result, run_dir, config, tagger_config):
    """Persist one run: checkpoint, loss trace, resolved config and metrics."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_model(result.model, run_dir / "checkpoint.bin")
    lines = ["epoch,loss\n"] + [f"{e},{v!r}\n" for e, v in enumerate(result.loss_trace)]
    (run_dir / "loss.csv").write_text("".join(lines), encoding="utf-8")
    (run_dir / "config.txt").write_text(
        f"# run seed {result.seed}\n[train]\n{config.to_text()}[tagger]\n{tagger_config.to_text()}",
        encoding="utf-8",
    )
    if result.report is not None:
        (run_dir / "metrics.csv").write_text(result.report.to_csv(), encoding="utf-8")
    result.checkpoint = run_dir / "checkpoint.bin"
    return result


def read_run_config(path):
    """Inverse of the config.txt written by :func:`write_run`."""
    text = Path(path).read_text(encoding="utf-8")
    sections, current = {}, None
    for line in text.splitlines():
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], [])
        elif current is not None:
            current.append(line)
    return (TrainConfig.from_text("\n".join(sections["train"])),
            TaggerConfig.from_text("\n".join(sections["tagger"])))


@dataclass
class SuiteResult:
    results: list
    failures: dict   # seed -> error message

    @property
    def complete(self):
        return not self.failures


def _suite_job(args):
    manifest, store, config, seed, tagger_config, test, vocab, out_dir, holdout = args
    res = train_run(manifest, store, config, seed, tagger_config, test, vocab)
    if out_dir is not None:
        run_dir = Path(out_dir) / f"run-{seed}"
        write_run(res, run_dir, config, tagger_config)
        if holdout is not None:
            rep = evaluate_model(res.model, store, holdout, vocab, skip_degenerate=True)
            (run_dir / "holdout_metrics.csv").write_text(rep.to_csv(), encoding="utf-8")
    res.model = None
    return res


def run_suite(manifest, store, config, tagger_config=DESK_CONFIG, test=None, vocab=None,
              out_dir=None, workers=1, holdout=None):
    """One run per configured seed; failures are collected per seed instead of raised.

    With ``workers > 1`` the seeds train in separate processes. Each run is
    self-contained, so the outcome does not depend on the worker count.
    """
    if len(config.seeds) < 2:
        raise InvalidInput("a suite needs at least 2 distinct seeds")
    jobs = [(manifest, store, config, s, tagger_config, test, vocab, out_dir, holdout)
            for s in config.seeds]
    results, failures = [], {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_suite_job, j) for j in jobs]
            outcomes = [_outcome(f.result) for f in futures]
    else:
        outcomes = [_outcome(_suite_job, j) for j in jobs]
    for s, (res, exc) in zip(config.seeds, outcomes):
        if exc is None:
            results.append(res)
        else:
            log.error("run with seed %d failed: %s", s, exc)
            failures[s] = f"{type(exc).__name__}: {exc}"
    return SuiteResult(results, failures)


def _outcome(fn, *args):
    try:
        return fn(*args), None
    except Exception as exc:  # noqa: BLE001 - reported per seed by the caller
        return None, exc


def with_seeds(config, seeds):
    return replace(config, seeds=tuple(seeds))

"""Command-line experiment runner: ``synth``, ``train``, ``sweep`` and ``report``.

Every artifact lands under the given output root. A condition directory
holds ``experiment.txt`` (resolved settings), the transformed training
manifest, any label audit, and one ``run-<seed>/`` per seed.
"""
import argparse
import csv
import io
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import canon
from .dataset import Manifest, TagVocabulary, load_manifest, save_manifest, subsample
from .errors import InvalidInput
from .evaluation import aggregate, paired_t_test
from .noise import corrupt_labels, shuffle_labels, sweep_plan
from .synth import SynthSpec, synth_corpus
from .trainer import PRESETS, FeatureStore, TrainConfig, run_suite

log = logging.getLogger("tagnoise")

CONDITIONS = ("curated", "noisy", "noisy_subsampled", "shuffled", "corrupted")
# streams for the one-off label transforms, derived from --label-seed
STREAM_SHUFFLE_LABELS, STREAM_CORRUPT, STREAM_SUBSAMPLE, STREAM_HOLDOUT = 11, 12, 13, 14


@dataclass(frozen=True)
class ExperimentConfig:
    condition: str = "curated"
    r: float = 0.0
    data: str = "."
    out: str = "runs"
    preset: str = "desk"
    label_seed: int = 0
    holdout: float = 0.0
    workers: int = 1
    cache: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise InvalidInput(f"unknown condition {self.condition!r}; choose from {CONDITIONS}")
        if not 0 <= self.r <= 100:
            raise InvalidInput(f"r must lie in [0, 100], got {self.r}")
        if not 0 <= self.holdout < 1:
            raise InvalidInput(f"holdout fraction must lie in [0, 1), got {self.holdout}")
        if self.preset not in PRESETS:
            raise InvalidInput(f"unknown preset {self.preset!r}")

    @property
    def name(self):
        if self.condition == "corrupted":
            r = int(self.r) if float(self.r).is_integer() else self.r
            return f"corrupted-r{r}"
        return self.condition

    def to_text(self):
        top = {k: v for k, v in asdict(self).items() if k != "train"}
        return canon.dumps(top) + self.train.to_text()


def _train_keys():
    return {f.name for f in fields(TrainConfig)}


def resolve_config(args):
    """Preset, then the optional config file, then explicit flags."""
    settings = {}
    if getattr(args, "config", None):
        settings.update(canon.loads(Path(args.config).read_text(encoding="utf-8")))
    for key in ("condition", "r", "data", "out", "preset", "label_seed", "holdout", "workers",
                "cache", "seeds", "total_epochs", "lr_drop_epoch", "batch_size",
                "snippet_policy", "snippet_offsets"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if getattr(args, "no_strict", False):
        settings["strict_deterministic"] = False
    preset_train, _ = PRESETS[settings.get("preset", "desk")]
    train_over = {k: settings.pop(k) for k in list(settings) if k in _train_keys()}
    unknown = set(settings) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(train=replace(preset_train, **train_over), **settings)


def load_corpus(data):
    data = Path(data)
    vocab_path = data / "vocabulary.txt"
    vocab = TagVocabulary.load(vocab_path) if vocab_path.exists() else TagVocabulary()
    splits = {}
    for split in ("curated_train", "noisy_train"):
        path = data / f"{split}.csv"
        if path.exists():
            splits[split] = load_manifest(path, vocab)
    splits["test"] = load_manifest(data / "test.csv", vocab, split_role="test")
    return vocab, splits


def _need(splits, name):
    if name not in splits:
        raise InvalidInput(f"corpus has no {name}.csv")
    return splits[name]


def split_holdout(m, fraction, label_seed):
    """Move ``round(fraction * n)`` uniformly chosen clips into a holdout manifest."""
    k = int(round(fraction * len(m)))
    if k == 0:
        return m, None
    rng = np.random.default_rng([label_seed, STREAM_HOLDOUT])
    held = set(rng.choice(len(m), size=k, replace=False).tolist())
    keep = [r for i, r in enumerate(m.records) if i not in held]
    out = [r for i, r in enumerate(m.records) if i in held]
    return Manifest(keep), Manifest(out)


def build_training_manifest(cfg, splits, cond_dir, vocab):
    """Apply the condition's label transform and write its audit. The test split is untouched."""
    curated = _need(splits, "curated_train")
    curated, holdout = split_holdout(curated, cfg.holdout, cfg.label_seed)
    if holdout is not None:
        save_manifest(holdout, cond_dir / "holdout_manifest.csv", vocab)
    c = cfg.condition
    if c == "curated":
        m = curated
    elif c == "noisy":
        m = _need(splits, "noisy_train")
    elif c == "noisy_subsampled":
        m = subsample(_need(splits, "noisy_train"), len(curated),
                      np.random.default_rng([cfg.label_seed, STREAM_SUBSAMPLE]))
    elif c == "shuffled":
        m = shuffle_labels(curated, np.random.default_rng([cfg.label_seed, STREAM_SHUFFLE_LABELS]))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "original", "assigned"])
        for before, after in zip(curated, m):
            w.writerow([before.id, ";".join(vocab.names[t] for t in sorted(before.tags)),
                        ";".join(vocab.names[t] for t in sorted(after.tags))])
        (cond_dir / "shuffle_audit.csv").write_text(buf.getvalue(), encoding="utf-8")
    else:
        m, plan = corrupt_labels(curated, cfg.r, np.random.default_rng([cfg.label_seed, STREAM_CORRUPT]),
                                 seed=cfg.label_seed)
        plan.save(cond_dir / "corruption_plan.csv", vocab)
    save_manifest(m, cond_dir / "train_manifest.csv", vocab)
    return m, holdout


def run_condition(cfg, vocab=None, splits=None, store=None):
    """Train one condition's suite; returns the suite result and its directory."""
    if splits is None:
        vocab, splits = load_corpus(cfg.data)
    cond_dir = Path(cfg.out) / cfg.name
    cond_dir.mkdir(parents=True, exist_ok=True)
    (cond_dir / "experiment.txt").write_text(cfg.to_text(), encoding="utf-8")
    manifest, holdout = build_training_manifest(cfg, splits, cond_dir, vocab)
    if store is None:
        store = FeatureStore(cfg.data, cfg.cache or None)
    _, tagger_config = PRESETS[cfg.preset]
    log.info("%s: %d training clips, seeds %s", cfg.name, len(manifest), list(cfg.train.seeds))
    suite = run_suite(manifest, store, cfg.train, tagger_config, splits["test"], vocab,
                      out_dir=cond_dir, workers=cfg.workers, holdout=holdout)
    for seed, msg in suite.failures.items():
        log.error("%s run-%d failed: %s", cfg.name, seed, msg)
    return suite, cond_dir


# reports ---------------------------------------------------------------

def read_metrics(path):
    """Per-run metrics CSV -> {"MAP": value, "MAUC": value}."""
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            if row["class"] == "all":
                out[row["metric"]] = float(row["value"])
    return out


def collect_condition(cond_dir):
    """Per-seed metrics of a condition directory plus the seeds whose runs are missing."""
    cond_dir = Path(cond_dir)
    exp = cond_dir / "experiment.txt"
    if not exp.exists():
        raise InvalidInput(f"{cond_dir}: not a condition directory (no experiment.txt)")
    seeds = canon.loads(exp.read_text(encoding="utf-8"))["seeds"]
    found, missing = {}, []
    for s in seeds:
        path = cond_dir / f"run-{s}" / "metrics.csv"
        if path.exists():
            found[s] = read_metrics(path)
        else:
            missing.append(s)
    return found, missing


def summary_rows(cond_dirs):
    rows, missing = [], {}
    for d in cond_dirs:
        found, miss = collect_condition(d)
        if miss:
            missing[Path(d).name] = miss
        if len(found) < 2:
            continue
        rows.append((Path(d).name,
                     aggregate([m["MAP"] for m in found.values()]),
                     aggregate([m["MAUC"] for m in found.values()])))
    return rows, missing


def render_table(rows):
    width = max([len("Training Data")] + [len(r[0]) for r in rows])
    lines = [f"{'Training Data':<{width}}  {'MAP':<13}  {'MAUC':<13}".rstrip()]
    lines.append("-" * len(lines[0]))
    for name, m, a in rows:
        lines.append(f"{name:<{width}}  {str(m):<13}  {a}")
    return "\n".join(lines) + "\n"


def render_csv(rows):
    # same 3-decimal strings as the text table
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "class", "value"])
    for name, m, a in rows:
        for label, agg in (("MAP", m), ("MAUC", a)):
            w.writerow([f"{label}_mean", name, f"{agg.mean:.3f}"])
            w.writerow([f"{label}_std", name, f"{agg.std:.3f}"])
    return buf.getvalue()


def sweep_table(out_root, rs, seeds):
    """Rows of (r, MAP, MAUC, t vs r=0, significant) from completed sweep suites."""
    per_r = {}
    for r in rs:
        found, _ = collect_condition(Path(out_root) / f"corrupted-r{r}")
        per_r[r] = found
    base = per_r[rs[0]]
    lines = [["r", "MAP", "MAUC", "t_vs_r0", "significant"]]
    for r in rs:
        found = per_r[r]
        common = [s for s in seeds if s in found and s in base]
        if len(found) < 2 or len(common) < 2:
            lines.append([str(r), "n/a", "n/a", "n/a", "n/a"])
            continue
        m = aggregate([found[s]["MAP"] for s in seeds if s in found])
        a = aggregate([found[s]["MAUC"] for s in seeds if s in found])
        tt = paired_t_test([found[s]["MAP"] for s in common], [base[s]["MAP"] for s in common])
        lines.append([str(r), str(m), str(a), f"{tt.t:.3f}", "yes" if tt.significant else "no"])
    return lines


# commands --------------------------------------------------------------

def cmd_synth(args):
    spec = SynthSpec(clips_per_class=args.clips_per_class, noisy_per_class=args.noisy_per_class,
                     test_per_class=args.test_per_class, p_noise=args.p_noise)
    manifests = synth_corpus(spec, args.seed, args.out)
    for split, m in manifests.items():
        print(f"{split}: {len(m)} clips")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    suite, cond_dir = run_condition(cfg)
    rows, _ = summary_rows([cond_dir]) if len(suite.results) >= 2 else ([], {})
    if rows:
        print(render_table(rows), end="")
    if suite.failures:
        print(f"{cfg.name}: incomplete, failed seeds {sorted(suite.failures)}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args):
    base = resolve_config(args)
    rs = sweep_plan(args.r_start, args.r_end, args.step)
    vocab, splits = load_corpus(base.data)
    store = FeatureStore(base.data, base.cache or None)
    ok = True
    for r in rs:
        suite, _ = run_condition(replace(base, condition="corrupted", r=r), vocab, splits, store)
        ok &= not suite.failures
    lines = sweep_table(base.out, rs, base.train.seeds)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(lines)
    out = Path(base.out)
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")
    widths = [max(len(row[i]) for row in lines) for i in range(len(lines[0]))]
    text = "".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n" for row in lines)
    (out / "sweep.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0 if ok else 1


def cmd_report(args):
    rows, missing = summary_rows(args.runs)
    table, table_csv = render_table(rows), render_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table, encoding="utf-8")
        (out / "report.csv").write_text(table_csv, encoding="utf-8")
    print(table, end="")
    for name, seeds in missing.items():
        print(f"{name}: missing runs for seeds {seeds}", file=sys.stderr)
    return 1 if missing else 0


def _seeds(text):
    return [int(s) for s in text.split(",") if s.strip()]


def _add_experiment_flags(p):
    p.add_argument("--config", help="canonical key = value config file; flags override it")
    p.add_argument("--data", help="corpus directory with manifests and audio")
    p.add_argument("--out", help="output root")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seeds", type=_seeds, help="comma-separated run seeds")
    p.add_argument("--label-seed", type=int, dest="label_seed")
    p.add_argument("--holdout", type=float, nargs="?", const=0.15,
                   help="hold out this fraction of curated train for validation (default 0.15)")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache", help="directory for cached feature files")
    p.add_argument("--epochs", type=int, dest="total_epochs")
    p.add_argument("--lr-drop-epoch", type=int, dest="lr_drop_epoch")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--snippet-policy", choices=("per_epoch", "fixed"), dest="snippet_policy")
    p.add_argument("--snippet-offsets", choices=("sample", "hop"), dest="snippet_offsets")
    p.add_argument("--no-strict", action="store_true", dest="no_strict",
                   help="allow prefetching the next batch in a background thread")


def build_parser():
    parser = argparse.ArgumentParser(prog="tagnoise", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips-per-class", type=int, default=20)
    p.add_argument("--noisy-per-class", type=int, default=80)
    p.add_argument("--test-per-class", type=int, default=10)
    p.add_argument("--p-noise", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one condition over all seeds")
    p.add_argument("--condition", choices=CONDITIONS)
    p.add_argument("--r", type=float, help="corruption percentage for --condition corrupted")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="corrupted-label suites for r = start..end")
    p.add_argument("--r-start", type=int, default=0)
    p.add_argument("--r-end", type=int, default=100)
    p.add_argument("--step", type=int, default=5)
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate condition directories into a table")
    p.add_argument("runs", nargs="+", help="condition directories")
    p.add_argument("--out", help="directory for report.txt and report.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInput, ValueError, OSError) as exc:
        print(f"tagnoise: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Multi-label audio tagging under label noise."""
from ._accel import backend
from .dataset import ClipRecord, Manifest, TagVocabulary, load_manifest
from .dsp import Waveform, compute_features
from .evaluation import EvalReport, evaluate, paired_t_test
from .noise import CorruptionPlan, corrupt_labels, shuffle_labels
from .tagger import DEFAULT_CONFIG, DESK_CONFIG, TaggerConfig, build
from .trainer import TrainConfig, run_suite, train_run

__version__ = "0.1.0"

__all__ = [
    "backend", "ClipRecord", "Manifest", "TagVocabulary", "load_manifest", "Waveform",
    "compute_features", "EvalReport", "evaluate", "paired_t_test", "CorruptionPlan",
    "corrupt_labels", "shuffle_labels", "DEFAULT_CONFIG", "DESK_CONFIG", "TaggerConfig", "build",
    "TrainConfig", "run_suite", "train_run",
]

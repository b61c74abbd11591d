"""The 8-conv / 3-avg-pool multi-label CNN tagger."""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import canon
from .dsp import SNIPPET_SAMPLES, Waveform, circular_pad, compute_features
from .nncore import (
    ConfigError, LayerSpec, Parameters, ShapeError, avgpool2d, batchnorm, conv2d, dense,
    dropout, global_avg_pool, load_checkpoint, no_grad, relu, save_checkpoint, sigmoid,
)
from .nncore.tensor import Tensor

N_CONV = 8
N_POOL = 3


@dataclass(frozen=True)
class TaggerConfig:
    """Architecture description. ``pool_after`` holds conv indices followed by a 2x2 pool."""

    conv_channels: tuple = (32, 32, 64, 64, 128, 128, 256, 256)
    kernel_sizes: tuple = (3, 3, 3, 3, 3, 3, 3, 3)
    pool_after: tuple = (1, 3, 5)
    dropout: float = 0.3
    n_classes: int = 12
    n_mels: int = 96

    def __post_init__(self):
        for name in ("conv_channels", "kernel_sizes", "pool_after"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.conv_channels) != N_CONV or len(self.kernel_sizes) != N_CONV:
            raise ConfigError(f"tagger needs exactly {N_CONV} conv layers")
        if len(set(self.pool_after)) != N_POOL:
            raise ConfigError(f"tagger needs exactly {N_POOL} distinct avg-pool positions")
        if any(not 0 <= i < N_CONV for i in self.pool_after):
            raise ConfigError(f"pool positions must index conv layers: {self.pool_after}")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError("kernel sizes must be odd and positive ('same' padding)")
        if any(c < 1 for c in self.conv_channels):
            raise ConfigError("channel counts must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout}")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be positive")

    def layer_specs(self):
        specs = []
        c_in = 1
        for i, (c, k) in enumerate(zip(self.conv_channels, self.kernel_sizes)):
            specs.append(LayerSpec("conv", in_channels=c_in, out_channels=c, kernel=k, padding=k // 2))
            specs.append(LayerSpec("batchnorm", channels=c))
            specs.append(LayerSpec("relu"))
            if i in self.pool_after:
                specs.append(LayerSpec("avgpool", pool=2))
                specs.append(LayerSpec("dropout", rate=self.dropout))
            c_in = c
        specs.append(LayerSpec("globalavgpool"))
        specs.append(LayerSpec("dense", in_features=c_in, out_features=self.n_classes))
        specs.append(LayerSpec("sigmoid"))
        return specs

    @property
    def min_frames(self):
        return 2 ** N_POOL

    def to_text(self):
        return canon.dumps({k: list(v) if isinstance(v, tuple) else v
                            for k, v in asdict(self).items()})

    @classmethod
    def from_text(cls, text):
        return cls(**canon.loads(text))


DEFAULT_CONFIG = TaggerConfig()
# Cheaper variant for single-core desk runs: narrow early layers and pooling
# right after each of the first three convs keep most of the compute at 1/64
# of the input resolution.
DESK_CONFIG = TaggerConfig(
    conv_channels=(4, 8, 16, 32, 32, 32, 32, 32),
    pool_after=(0, 1, 2),
    dropout=0.1,
)


@dataclass
class TaggerModel:
    config: TaggerConfig
    params: Parameters
    specs: list = field(repr=False)
    mode: str = "train"
    conv_method: str = "im2col"

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def forward(self, x, rng=None):
        """Map a (N, 1, frames, n_mels) batch to N x n_classes probabilities.

        ``rng`` drives dropout and is required in train mode.
        """
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if data.ndim != 4 or data.shape[1] != 1 or data.shape[3] != self.config.n_mels:
            raise ShapeError(f"expected (N, 1, frames, {self.config.n_mels}) input, got {data.shape}")
        if data.shape[2] < self.config.min_frames:
            raise ShapeError(
                f"input has {data.shape[2]} frames; at least {self.config.min_frames} are "
                "needed after pooling, pad the clip first"
            )
        training = self.mode == "train"
        if training and rng is None:
            raise ValueError("train-mode forward needs an rng for dropout")
        h = x if isinstance(x, Tensor) else Tensor(data)
        p = self.params
        conv_i = bn_i = 0
        for spec in self.specs:
            kind = spec.kind
            if kind == "conv":
                h = conv2d(h, p[f"conv{conv_i}.weight"], p[f"conv{conv_i}.bias"],
                           padding=spec.padding, stride=spec.stride, method=self.conv_method)
                conv_i += 1
            elif kind == "batchnorm":
                h = batchnorm(h, p[f"bn{bn_i}.gamma"], p[f"bn{bn_i}.beta"],
                              p[f"bn{bn_i}.running_mean"], p[f"bn{bn_i}.running_var"], training)
                bn_i += 1
            elif kind == "relu":
                h = relu(h)
            elif kind == "avgpool":
                h = avgpool2d(h, spec.pool)
            elif kind == "dropout":
                h = dropout(h, spec.rate, training, rng)
            elif kind == "globalavgpool":
                h = global_avg_pool(h)
            elif kind == "dense":
                h = dense(h, p["fc.weight"], p["fc.bias"])
            elif kind == "sigmoid":
                h = sigmoid(h)
        return h

    def predict(self, batch):
        """Eval-mode probabilities as a plain array; the model is left untouched."""
        prev = self.mode
        self.mode = "eval"
        try:
            with no_grad():
                return self.forward(batch).data
        finally:
            self.mode = prev


def build(config=DEFAULT_CONFIG, init_seed=0):
    """Create a model with He-uniform weights, zero biases, unit gamma, zero beta."""
    if not isinstance(config, TaggerConfig):
        raise ConfigError(f"expected TaggerConfig, got {type(config).__name__}")
    rng = np.random.default_rng(init_seed)
    params = Parameters()
    specs = config.layer_specs()
    conv_i = bn_i = 0
    for spec in specs:
        if spec.kind == "conv":
            shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
            bound = np.sqrt(6.0 / (spec.in_channels * spec.kernel * spec.kernel))
            params.add(f"conv{conv_i}.weight", rng.uniform(-bound, bound, shape))
            params.add(f"conv{conv_i}.bias", np.zeros(spec.out_channels))
            conv_i += 1
        elif spec.kind == "batchnorm":
            params.add(f"bn{bn_i}.gamma", np.ones(spec.channels))
            params.add(f"bn{bn_i}.beta", np.zeros(spec.channels))
            params.add_state(f"bn{bn_i}.running_mean", np.zeros(spec.channels))
            params.add_state(f"bn{bn_i}.running_var", np.ones(spec.channels))
            bn_i += 1
        elif spec.kind == "dense":
            bound = np.sqrt(6.0 / spec.in_features)
            params.add("fc.weight", rng.uniform(-bound, bound, (spec.in_features, spec.out_features)))
            params.add("fc.bias", np.zeros(spec.out_features))
    return TaggerModel(config=config, params=params, specs=specs)


def predict_clip(model, w: Waveform):
    """Score a whole clip: features of the full audio, padded to 3 s when shorter."""
    if model.mode != "eval":
        raise ValueError("predict_clip requires an eval-mode model")
    if len(w.samples) < SNIPPET_SAMPLES:
        w = circular_pad(w, SNIPPET_SAMPLES)
    feats = compute_features(w)
    return model.predict(feats.values[None, None])[0]


def save_model(model, path):
    save_checkpoint(path, model.params.arrays(), header=model.config.to_text())


def load_model(path):
    header, arrays = load_checkpoint(path)
    model = build(TaggerConfig.from_text(header), init_seed=0)
    model.params.load_arrays(arrays)
    return model.eval()

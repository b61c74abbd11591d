from dataclasses import dataclass

KINDS = ("conv", "batchnorm", "relu", "avgpool", "globalavgpool", "dense", "dropout", "sigmoid")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential network.

    Only the fields relevant to ``kind`` are read: ``in_channels``/``out_channels``,
    ``kernel``/``padding``/``stride`` for conv, ``channels`` for batchnorm,
    ``pool`` for avgpool, ``in_features``/``out_features`` for dense and
    ``rate`` for dropout.
    """

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3
    padding: int = 1
    stride: int = 1
    channels: int = 0
    pool: int = 2
    in_features: int = 0
    out_features: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            positive = (self.in_channels, self.out_channels, self.kernel, self.stride)
            if min(positive) < 1 or self.padding < 0:
                raise ConfigError(f"conv hyperparameters must be positive: {self}")
        elif self.kind == "batchnorm" and self.channels < 1:
            raise ConfigError("batchnorm needs channels >= 1")
        elif self.kind == "avgpool" and self.pool < 1:
            raise ConfigError("avgpool needs pool >= 1")
        elif self.kind == "dense" and min(self.in_features, self.out_features) < 1:
            raise ConfigError("dense needs positive feature counts")
        elif self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.rate}")

"""Small configurable classifier: optional single conv stage plus an MLP.

Checkpoint byte layout (``save_checkpoint`` / ``load_checkpoint``):

    "NSCKPT 1\\n"                 ASCII magic + format version
    "config <compact json>\\n"    echo of the ClassifierConfig
    "params <count>\\n"           total number of float64 values
    <count * 8 bytes>             little-endian float64 parameter block,
                                  tensors in construction order, row-major

Construction order: conv weight, conv bias (if a conv stage is configured),
then per dense layer weight [in, out] and bias [1, out].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericError, ShapeError
from .tensor import (
    GradTape,
    Tensor,
    add,
    clamp_min,
    exp,
    log,
    matmul,
    mul,
    pick,
    powc,
    relu,
    reshape,
    scale,
    sub,
    take_flat,
    take_row,
    tsum,
)

__all__ = [
    "ConvSpec",
    "ClassifierConfig",
    "LossConfig",
    "Classifier",
    "softmax",
    "softmax_rows",
    "per_sample_loss",
    "save_checkpoint",
    "load_checkpoint",
]

# Probability floor applied before any log; prevents -inf on confident
# mistakes without materially distorting gradients.
PROB_FLOOR = 1e-12

_CHECKPOINT_MAGIC = "NSCKPT 1"

LOSS_KINDS = ("cross_entropy", "focal", "label_smoothing")


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    channels: int

    def __post_init__(self):
        if self.kernel < 1 or self.channels < 1:
            raise ConfigError(f"invalid conv spec {self}")


@dataclass(frozen=True)
class ClassifierConfig:
    input_shape: tuple[int, int, int]  # (H0, W0, channels)
    hidden: tuple[int, ...]
    class_count: int
    init_seed: int
    conv: ConvSpec | None = None

    def __post_init__(self):
        h, w, c = self.input_shape
        if h < 2 or w < 2 or c < 1:
            raise ConfigError(f"input shape {self.input_shape} too small")
        if self.class_count < 2:
            raise ConfigError("class_count must be at least 2")
        if any(width < 1 for width in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")
        if self.conv is not None and self.conv.kernel > min(h, w):
            raise ConfigError("conv kernel larger than the input")

    def to_json(self) -> str:
        payload = {
            "input_shape": list(self.input_shape),
            "hidden": list(self.hidden),
            "class_count": self.class_count,
            "init_seed": self.init_seed,
            "conv": None if self.conv is None
            else {"kernel": self.conv.kernel, "channels": self.conv.channels},
        }
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ClassifierConfig":
        raw = json.loads(text)
        conv = raw.get("conv")
        return cls(
            input_shape=tuple(raw["input_shape"]),
            hidden=tuple(raw["hidden"]),
            class_count=int(raw["class_count"]),
            init_seed=int(raw["init_seed"]),
            conv=None if conv is None else ConvSpec(int(conv["kernel"]),
                                                    int(conv["channels"])),
        )


@dataclass(frozen=True)
class LossConfig:
    kind: str = "cross_entropy"
    focal_gamma: float = 2.0
    smoothing_epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.focal_gamma < 0.0:
            raise ConfigError("focal gamma must be non-negative")
        if not 0.0 <= self.smoothing_epsilon < 1.0:
            raise ConfigError("smoothing epsilon must lie in [0, 1)")


def _im2col_indices(h: int, w: int, c: int, kernel: int) -> tuple[np.ndarray, int, int]:
    """Flat gather indices turning one HxWxC image into patch rows.

    Valid padding, stride 1: output is (h-k+1)*(w-k+1) rows of k*k*c values.
    """
    out_h, out_w = h - kernel + 1, w - kernel + 1
    base = np.arange(h * w * c).reshape(h, w, c)
    patches = np.empty((out_h, out_w, kernel, kernel, c), dtype=np.int64)
    for dy in range(kernel):
        for dx in range(kernel):
            patches[:, :, dy, dx, :] = base[dy:dy + out_h, dx:dx + out_w, :]
    return patches.reshape(out_h * out_w, kernel * kernel * c), out_h, out_w


class Classifier:
    """MLP classifier with an optional leading convolution stage.

    Weights initialize uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from
    the config seed, so identical configs always start identically.
    """

    def __init__(self, config: ClassifierConfig):
        self.config = config
        h, w, c = config.input_shape
        rng = np.random.default_rng(config.init_seed)
        self.parameters: list[Tensor] = []

        self._conv_idx = None
        if config.conv is not None:
            k, f = config.conv.kernel, config.conv.channels
            idx, out_h, out_w = _im2col_indices(h, w, c, k)
            self._conv_idx = idx
            self._conv_patches = out_h * out_w
            self._conv_w = self._init_param(rng, k * k * c, (k * k * c, f))
            self._conv_b = self._init_param(rng, k * k * c, (1, f))
            self.parameters += [self._conv_w, self._conv_b]
            flat_in = out_h * out_w * f
        else:
            flat_in = h * w * c

        self._dense: list[tuple[Tensor, Tensor]] = []
        widths = list(config.hidden) + [config.class_count]
        fan_in = flat_in
        for width in widths:
            weight = self._init_param(rng, fan_in, (fan_in, width))
            bias = self._init_param(rng, fan_in, (1, width))
            self._dense.append((weight, bias))
            self.parameters += [weight, bias]
            fan_in = width

    @staticmethod
    def _init_param(rng: np.random.Generator, fan_in: int,
                    shape: tuple[int, ...]) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape))

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters)

    def register_on(self, tape: GradTape) -> None:
        tape.register(*self.parameters)

    def forward(self, x: Tensor, tape: GradTape | None = None) -> Tensor:
        """Logits [K] for a single HxWxC input."""
        if x.shape != self.config.input_shape:
            raise ShapeError(
                f"input shape {x.shape} does not match model "
                f"input {self.config.input_shape}"
            )
        batched = reshape(x, (1,) + x.shape, tape=tape)
        logits = self.forward_batch(batched, tape=tape)
        return take_row(logits, 0, tape=tape)

    def forward_batch(self, xs: Tensor, tape: GradTape | None = None) -> Tensor:
        """Logits [N, K] for a stack of N inputs."""
        if len(xs.shape) != 4 or xs.shape[1:] != self.config.input_shape:
            raise ShapeError(
                f"batch shape {xs.shape} does not match model "
                f"input {self.config.input_shape}"
            )
        n = xs.shape[0]
        if self._conv_idx is not None:
            per_image = int(np.prod(self.config.input_shape))
            offsets = (np.arange(n, dtype=np.int64) * per_image)
            gather = (offsets[:, None, None] + self._conv_idx[None]).reshape(
                n * self._conv_patches, self._conv_idx.shape[1])
            cols = take_flat(xs, gather, gather.shape, tape=tape)
            pre = add(matmul(cols, self._conv_w, tape=tape),
                      self._tile_bias(self._conv_b, cols.shape[0], tape), tape=tape)
            act = relu(pre, tape=tape)
            out = reshape(act, (n, self._conv_patches * self.config.conv.channels),
                          tape=tape)
        else:
            out = reshape(xs, (n, int(np.prod(self.config.input_shape))), tape=tape)

        last = len(self._dense) - 1
        for i, (weight, bias) in enumerate(self._dense):
            out = add(matmul(out, weight, tape=tape),
                      self._tile_bias(bias, out.shape[0], tape), tape=tape)
            if i != last:
                out = relu(out, tape=tape)
        return out

    @staticmethod
    def _tile_bias(bias: Tensor, rows: int, tape: GradTape | None) -> Tensor:
        # Row broadcast via matmul with a constant ones column, keeping the
        # tape free of non-scalar broadcasting.
        ones = Tensor(np.ones((rows, 1)))
        return matmul(ones, bias, tape=tape)


def softmax(z: Tensor, tape: GradTape | None = None) -> Tensor:
    """Probabilities from a logit vector [K], max-subtracted for stability.

    Computed as exp(z - max - logsumexp); subtracting the max as a constant
    is exact for gradients because the softmax Jacobian annihilates uniform
    shifts.
    """
    if len(z.shape) != 1 or z.shape[0] < 1:
        raise ShapeError(f"softmax expects a non-empty vector, got {z.shape}")
    if not np.all(np.isfinite(z.values)):
        raise NumericError("softmax of non-finite logits")
    shifted = sub(z, float(np.max(z.values)), tape=tape)
    log_norm = log(tsum(exp(shifted, tape=tape), tape=tape), tape=tape)
    return exp(sub(shifted, log_norm, tape=tape), tape=tape)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax on a plain [N, K] array; untaped evaluation path."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return np.exp(shifted - np.log(e.sum(axis=1, keepdims=True)))


def per_sample_loss(p: Tensor, y: int, cfg: LossConfig,
                    tape: GradTape | None = None) -> Tensor:
    """Scalar loss of one sample from its probability vector and true class."""
    k = p.shape[0] if len(p.shape) == 1 else 0
    if k < 1:
        raise ShapeError(f"probabilities must be a vector, got shape {p.shape}")
    if not 0 <= y < k:
        raise ConfigError(f"label {y} out of range for {k} classes")

    p_y = clamp_min(pick(p, y, tape=tape), PROB_FLOOR, tape=tape)
    nll = scale(log(p_y, tape=tape), -1.0, tape=tape)

    if cfg.kind == "cross_entropy":
        return nll
    if cfg.kind == "focal":
        modulator = powc(sub(1.0, p_y, tape=tape), cfg.focal_gamma, tape=tape)
        return mul(modulator, nll, tape=tape)
    # label smoothing: (1-eps) * nll + eps/K * sum_k -log p_k
    eps = cfg.smoothing_epsilon
    all_logs = log(clamp_min(p, PROB_FLOOR, tape=tape), tape=tape)
    smoothed = scale(tsum(all_logs, tape=tape), -eps / k, tape=tape)
    return add(scale(nll, 1.0 - eps, tape=tape), smoothed, tape=tape)


def save_checkpoint(model: Classifier, path: str | Path) -> None:
    header = (
        f"{_CHECKPOINT_MAGIC}\n"
        f"config {model.config.to_json()}\n"
        f"params {model.num_parameters}\n"
    ).encode("ascii")
    block = b"".join(
        np.ascontiguousarray(p.values, dtype="<f8").tobytes()
        for p in model.parameters
    )
    Path(path).write_bytes(header + block)


def load_checkpoint(path: str | Path) -> Classifier:
    blob = Path(path).read_bytes()
    try:
        magic_end = blob.index(b"\n")
        config_end = blob.index(b"\n", magic_end + 1)
        count_end = blob.index(b"\n", config_end + 1)
    except ValueError:
        raise FormatError(f"{path}: truncated checkpoint header") from None
    if blob[:magic_end].decode("ascii", "replace") != _CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    config_line = blob[magic_end + 1:config_end].decode("ascii")
    count_line = blob[config_end + 1:count_end].decode("ascii")
    if not config_line.startswith("config ") or not count_line.startswith("params "):
        raise FormatError(f"{path}: malformed checkpoint header")
    config = ClassifierConfig.from_json(config_line[len("config "):])
    count = int(count_line[len("params "):])

    block = blob[count_end + 1:]
    if len(block) != count * 8:
        raise FormatError(
            f"{path}: parameter block is {len(block)} bytes, expected {count * 8}"
        )
    model = Classifier(config)
    if model.num_parameters != count:
        raise FormatError(f"{path}: parameter count does not match config")
    flat = np.frombuffer(block, dtype="<f8")
    cursor = 0
    for p in model.parameters:
        p.values[...] = flat[cursor:cursor + p.size].reshape(p.shape)
        cursor += p.size
    return model

"""Training loop with group-competition loss weighting.

Each step: shuffle-derived batch, detached composite scoring, affine
score-to-weight map, weighted mean loss on the tape, backprop, SGD with
momentum.  With rho == 0 the scoring stage is skipped outright, so the
loop degenerates to exactly the plain weighted-ERM loop.

Metrics are written as CSV with one row per (epoch, split).  Wall-clock
columns (``seconds``, ``ns_seconds``) are physically nondeterministic;
``deterministic_csv_bytes`` strips them so reruns can be compared
byte-for-byte on everything else.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SamplerConfig, epoch_indices
from .errors import ConfigError, NumericError, ShapeError, TrainingDiverged
from .imageops import GridLayout, Normalization, _normalize_batch
from .model import (
    PROB_FLOOR,
    Classifier,
    LossConfig,
    per_sample_loss,
    softmax,
    softmax_rows,
)
from .nscore import batch_ns_scores
from .tensor import GradTape, Tensor, add, backward, mul, scale, take_row
from .weighting import WeightingConfig, compute_weights

__all__ = [
    "TrainConfig",
    "MetricsRecord",
    "EvalResult",
    "DualityReport",
    "weighted_batch_loss",
    "sgd_momentum_step",
    "train",
    "train_erm",
    "evaluate",
    "duality_check",
    "write_metrics_csv",
    "read_metrics_csv",
    "deterministic_csv_bytes",
]

_METRICS_COLUMNS = (
    "epoch", "split", "mean_loss", "accuracy", "per_class_accuracy",
    "per_class_ns", "seconds", "train_forward_passes", "ns_forward_passes",
    "ns_seconds",
)
_TIMING_COLUMNS = ("seconds", "ns_seconds")

_EVAL_CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    """Everything the loop needs besides the dataset and the model."""

    batch_size: int
    epochs: int
    learning_rate: float
    momentum: float = 0.0
    decay_milestones: tuple[tuple[int, float], ...] = ()
    layout: GridLayout = GridLayout(2, 2)
    weighting: WeightingConfig = WeightingConfig(1.0, 0.0, "uniform")
    sampler: SamplerConfig = SamplerConfig()
    loss: LossConfig = LossConfig()
    normalization: Normalization | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("need at least one epoch")
        if self.batch_size < self.layout.group_size:
            raise ConfigError(
                f"batch size {self.batch_size} smaller than group size "
                f"{self.layout.group_size}"
            )
        for milestone, factor in self.decay_milestones:
            if milestone < 0 or factor <= 0:
                raise ConfigError(
                    f"bad decay milestone ({milestone}, {factor})"
                )

    @property
    def group_size(self) -> int:
        return self.layout.group_size

    def lr_at(self, epoch: int) -> float:
        """Base rate times every decay factor whose milestone has passed."""
        lr = self.learning_rate
        for milestone, factor in self.decay_milestones:
            if epoch >= milestone:
                lr *= factor
        return lr


@dataclass(frozen=True)
class MetricsRecord:
    """One (epoch, split) measurement row.

    Forward-pass counters are in per-image units and populated on train
    rows only; ``per_class_ns`` is None when no scoring ran (test rows,
    or rho == 0).  ``seconds``/``ns_seconds`` are wall-clock and therefore
    excluded from determinism comparisons.
    """

    epoch: int
    split: str
    mean_loss: float
    accuracy: float
    per_class_accuracy: tuple[float, ...]
    per_class_ns: tuple[float, ...] | None
    seconds: float
    train_forward_passes: int
    ns_forward_passes: int
    ns_seconds: float

    def deterministic_key(self) -> tuple:
        """Every field except the wall-clock ones."""
        return (self.epoch, self.split, self.mean_loss, self.accuracy,
                self.per_class_accuracy, self.per_class_ns,
                self.train_forward_passes, self.ns_forward_passes)


@dataclass(frozen=True)
class EvalResult:
    mean_loss: float
    accuracy: float
    per_class_accuracy: tuple[float, ...]


def weighted_batch_loss(losses, weights, tape: GradTape | None = None) -> Tensor:
    """(1/B) * sum_i w_i * loss_i as a taped scalar.

    Weights enter as constants (no gradient flows into them), which is
    what keeps the scoring stage outside the optimization.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(losses) != w.shape[0]:
        raise ShapeError(
            f"{len(losses)} losses but {w.shape} weights"
        )
    if not losses:
        raise ShapeError("empty batch")
    total = None
    for loss_i, w_i in zip(losses, w):
        term = mul(loss_i, float(w_i), tape=tape)
        total = term if total is None else add(total, term, tape=tape)
    return scale(total, 1.0 / len(losses), tape=tape)


def sgd_momentum_step(params, grads, velocity, learning_rate: float,
                      momentum: float) -> None:
    """v <- mu*v + g; theta <- theta - eta*v, in place on the parameters."""
    if not len(params) == len(grads) == len(velocity):
        raise ShapeError("params, grads, and velocity lengths differ")
    for p, g, v in zip(params, grads, velocity):
        gv = g.values if isinstance(g, Tensor) else np.asarray(g)
        if gv.shape != p.values.shape or v.shape != p.values.shape:
            raise ShapeError(
                f"shape mismatch in update: param {p.values.shape}, "
                f"grad {gv.shape}, velocity {v.shape}"
            )
        v *= momentum
        v += gv
        p.values -= learning_rate * v


def _eval_losses(posteriors: np.ndarray, labels: np.ndarray,
                 cfg: LossConfig) -> np.ndarray:
    """Untaped per-sample losses mirroring the taped formulas exactly."""
    n, k = posteriors.shape
    p_y = np.maximum(posteriors[np.arange(n), labels], PROB_FLOOR)
    nll = -np.log(p_y)
    if cfg.kind == "cross_entropy":
        return nll
    if cfg.kind == "focal":
        return (1.0 - p_y) ** cfg.focal_gamma * nll
    eps = cfg.smoothing_epsilon
    all_logs = np.log(np.maximum(posteriors, PROB_FLOOR)).sum(axis=1)
    return (1.0 - eps) * nll + (-eps / k) * all_logs


def _accuracy_stats(predictions: np.ndarray, labels: np.ndarray,
                    class_count: int) -> tuple[float, tuple[float, ...]]:
    correct = predictions == labels
    overall = float(correct.mean())
    per_class = []
    for k in range(class_count):
        mask = labels == k
        per_class.append(float(correct[mask].mean()) if mask.any() else 0.0)
    return overall, tuple(per_class)


def evaluate(model: Classifier, dataset: Dataset,
             loss_cfg: LossConfig = LossConfig(),
             normalization: Normalization | None = None) -> EvalResult:
    """Mean loss and accuracies; argmax prediction, no weighting.

    np.argmax resolves ties toward the smallest class index, which is the
    documented tie rule.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    predictions = np.empty(len(dataset), dtype=np.int64)
    for start in range(0, len(dataset), _EVAL_CHUNK):
        stop = min(start + _EVAL_CHUNK, len(dataset))
        images = dataset.images[start:stop]
        if normalization is not None:
            images = _normalize_batch(images, normalization)
        logits = model.forward_batch(Tensor(images)).values
        posteriors = softmax_rows(logits)
        labels = dataset.labels[start:stop]
        loss_sum += float(_eval_losses(posteriors, labels, loss_cfg).sum())
        predictions[start:stop] = np.argmax(logits, axis=1)
    overall, per_class = _accuracy_stats(predictions, dataset.labels,
                                         dataset.class_count)
    return EvalResult(mean_loss=loss_sum / len(dataset), accuracy=overall,
                      per_class_accuracy=per_class)


@dataclass
class _EpochTally:
    """Running train-split aggregates for one epoch."""

    class_count: int
    loss_sum: float = 0.0
    sample_count: int = 0
    correct: np.ndarray = field(init=False)
    seen: np.ndarray = field(init=False)
    ns_sum: np.ndarray = field(init=False)
    ns_count: np.ndarray = field(init=False)
    train_forwards: int = 0
    ns_forwards: int = 0
    ns_seconds: float = 0.0

    def __post_init__(self):
        self.correct = np.zeros(self.class_count, dtype=np.int64)
        self.seen = np.zeros(self.class_count, dtype=np.int64)
        self.ns_sum = np.zeros(self.class_count)
        self.ns_count = np.zeros(self.class_count, dtype=np.int64)

    def record_batch(self, labels, predictions, batch_loss):
        b = labels.shape[0]
        self.loss_sum += batch_loss * b
        self.sample_count += b
        self.train_forwards += b
        np.add.at(self.seen, labels, 1)
        np.add.at(self.correct, labels[predictions == labels], 1)

    def record_scores(self, labels, scores, composites, elapsed):
        self.ns_forwards += composites
        self.ns_seconds += elapsed
        np.add.at(self.ns_sum, labels, scores)
        np.add.at(self.ns_count, labels, 1)

    def train_record(self, epoch, seconds, scored: bool) -> MetricsRecord:
        acc_total = int(self.correct.sum())
        per_class_acc = tuple(
            float(c) / s if s else 0.0
            for c, s in zip(self.correct, self.seen)
        )
        per_class_ns = None
        if scored:
            per_class_ns = tuple(
                float(t) / n if n else 0.0
                for t, n in zip(self.ns_sum, self.ns_count)
            )
        return MetricsRecord(
            epoch=epoch, split="train",
            mean_loss=self.loss_sum / self.sample_count,
            accuracy=acc_total / self.sample_count,
            per_class_accuracy=per_class_acc,
            per_class_ns=per_class_ns,
            seconds=seconds,
            train_forward_passes=self.train_forwards,
            ns_forward_passes=self.ns_forwards,
            ns_seconds=self.ns_seconds,
        )


def _taped_batch_losses(model, images, labels, loss_cfg, tape):
    """Taped forward for one batch: per-sample losses plus predictions."""
    logits = model.forward_batch(Tensor(images), tape=tape)
    predictions = np.argmax(logits.values, axis=1)
    losses = []
    for i in range(labels.shape[0]):
        row = take_row(logits, i, tape=tape)
        probs = softmax(row, tape=tape)
        losses.append(per_sample_loss(probs, int(labels[i]), loss_cfg,
                                      tape=tape))
    return losses, predictions


def _check_finite(value: float, epoch: int, step: int, quantity: str):
    if not np.isfinite(value):
        raise TrainingDiverged(epoch, step, quantity, value)


def train(config: TrainConfig, train_set: Dataset, test_set: Dataset,
          model: Classifier, score_sink=None
          ) -> tuple[Classifier, list[MetricsRecord]]:
    """Run the full loop; returns the trained model and per-epoch records.

    Competition scoring runs only when rho != 0; with rho == 0 every
    sample's weight is the sigma constant and no composite is ever built,
    so the rho == 0 loop is the NS-disabled loop.

    ``score_sink``, if given, is called as sink(epoch, step, result,
    weights, batch_indices) after each scored batch.  It receives copies
    of logged values only; nothing it does can perturb training state.
    """
    if len(train_set) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if train_set.image_shape != tuple(model.config.input_shape):
        raise ConfigError(
            f"dataset images {train_set.image_shape} do not match model "
            f"input {model.config.input_shape}"
        )
    scoring = config.weighting.rho != 0.0
    velocity = [np.zeros_like(p.values) for p in model.parameters]
    records: list[MetricsRecord] = []
    step = 0

    for epoch in range(config.epochs):
        epoch_start = time.perf_counter()
        lr = config.lr_at(epoch)
        order = epoch_indices(train_set.labels, train_set.class_count,
                              config.sampler, epoch, config.seed)
        tally = _EpochTally(train_set.class_count)

        for lo in range(0, order.shape[0], config.batch_size):
            batch_idx = order[lo:lo + config.batch_size]
            images = train_set.images[batch_idx]
            labels = train_set.labels[batch_idx]
            if config.normalization is not None:
                images = _normalize_batch(images, config.normalization)

            if scoring:
                ns_start = time.perf_counter()
                result = batch_ns_scores(images, labels, model, config.layout)
                weights = compute_weights(result.score, config.weighting)
                tally.record_scores(labels, result.score, len(result.groups),
                                    time.perf_counter() - ns_start)
                if score_sink is not None:
                    score_sink(epoch, step, result, weights.copy(), batch_idx)
            else:
                weights = np.full(labels.shape[0], config.weighting.sigma)

            tape = GradTape()
            model.register_on(tape)
            try:
                losses, predictions = _taped_batch_losses(
                    model, images, labels, config.loss, tape)
                batch_loss = weighted_batch_loss(losses, weights, tape=tape)
            except NumericError as err:
                raise TrainingDiverged(epoch, step, str(err),
                                       float("nan")) from err
            loss_value = batch_loss.item()
            _check_finite(loss_value, epoch, step, "batch loss")

            grads = backward(tape, batch_loss)
            sgd_momentum_step(model.parameters,
                              [grads[p] for p in model.parameters],
                              velocity, lr, config.momentum)
            tally.record_batch(labels, predictions, loss_value)
            step += 1

        train_seconds = time.perf_counter() - epoch_start
        records.append(tally.train_record(epoch, train_seconds, scoring))

        eval_start = time.perf_counter()
        result = evaluate(model, test_set, config.loss, config.normalization)
        records.append(MetricsRecord(
            epoch=epoch, split="test", mean_loss=result.mean_loss,
            accuracy=result.accuracy,
            per_class_accuracy=result.per_class_accuracy,
            per_class_ns=None, seconds=time.perf_counter() - eval_start,
            train_forward_passes=0, ns_forward_passes=0, ns_seconds=0.0,
        ))
    return model, records


def train_erm(config: TrainConfig, train_set: Dataset, test_set: Dataset,
              model: Classifier) -> tuple[Classifier, list[MetricsRecord]]:
    """Plain uniform-weight reference loop with no scoring code at all.

    Written independently of ``train`` so the rho == 0 equivalence can be
    checked against a loop that cannot run competition logic even by
    accident.  Weights are identically 1, so it matches ``train`` with
    sigma = 1, rho = 0 bit for bit.
    """
    if len(train_set) == 0:
        raise ConfigError("cannot train on an empty dataset")
    velocity = [np.zeros_like(p.values) for p in model.parameters]
    records: list[MetricsRecord] = []
    step = 0
    for epoch in range(config.epochs):
        epoch_start = time.perf_counter()
        lr = config.lr_at(epoch)
        order = epoch_indices(train_set.labels, train_set.class_count,
                              config.sampler, epoch, config.seed)
        tally = _EpochTally(train_set.class_count)
        for lo in range(0, order.shape[0], config.batch_size):
            batch_idx = order[lo:lo + config.batch_size]
            images = train_set.images[batch_idx]
            labels = train_set.labels[batch_idx]
            if config.normalization is not None:
                images = _normalize_batch(images, config.normalization)
            tape = GradTape()
            model.register_on(tape)
            losses, predictions = _taped_batch_losses(
                model, images, labels, config.loss, tape)
            total = losses[0]
            for extra in losses[1:]:
                total = add(total, extra, tape=tape)
            batch_loss = scale(total, 1.0 / len(losses), tape=tape)
            loss_value = batch_loss.item()
            _check_finite(loss_value, epoch, step, "batch loss")
            grads = backward(tape, batch_loss)
            sgd_momentum_step(model.parameters,
                              [grads[p] for p in model.parameters],
                              velocity, lr, config.momentum)
            tally.record_batch(labels, predictions, loss_value)
            step += 1
        train_seconds = time.perf_counter() - epoch_start
        records.append(tally.train_record(epoch, train_seconds, False))
        eval_start = time.perf_counter()
        result = evaluate(model, test_set, config.loss, config.normalization)
        records.append(MetricsRecord(
            epoch=epoch, split="test", mean_loss=result.mean_loss,
            accuracy=result.accuracy,
            per_class_accuracy=result.per_class_accuracy,
            per_class_ns=None, seconds=time.perf_counter() - eval_start,
            train_forward_passes=0, ns_forward_passes=0, ns_seconds=0.0,
        ))
    return model, records


@dataclass(frozen=True)
class DualityReport:
    """Mean-risk vs mean-fitness comparison over candidate parameters.

    ``spearman`` is None when every candidate ties: correlation over
    constant ranks is undefined, though the orderings still agree.
    """

    mean_risks: tuple[float, ...]
    mean_fitnesses: tuple[float, ...]
    risk_order: tuple[int, ...]     # indices sorted by ascending risk
    fitness_order: tuple[int, ...]  # indices sorted by descending fitness
    spearman: float | None


def _ranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); ties share their mean rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0])
    ranks[order] = np.arange(1, values.shape[0] + 1, dtype=np.float64)
    for v in np.unique(values):
        mask = values == v
        if mask.sum() > 1:
            ranks[mask] = ranks[mask].mean()
    return ranks


def _spearman(xs: np.ndarray, ys: np.ndarray) -> float:
    rx, ry = _ranks(xs), _ranks(ys)
    n = xs.shape[0]
    if np.unique(rx).size == n and np.unique(ry).size == n:
        # distinct ranks: the integer formula is exact
        d = rx - ry
        return 1.0 - 6.0 * float(d @ d) / (n * (n * n - 1))
    rxc, ryc = rx - rx.mean(), ry - ry.mean()
    denom = np.sqrt((rxc @ rxc) * (ryc @ ryc))
    if denom == 0.0:
        raise ConfigError("spearman undefined: constant ranks")
    return float((rxc @ ryc) / denom)


def duality_check(candidates, dataset: Dataset, fitness_ceiling: float,
                  loss_cfg: LossConfig = LossConfig()) -> DualityReport:
    """Compare ranking by mean risk with ranking by mean fitness.

    Fitness of a sample is fitness_ceiling - loss; the ceiling must
    exceed every observed loss so fitness stays positive.  Because the
    map is a fixed affine flip, ordering candidates by descending mean
    fitness must reproduce ordering by ascending mean risk, whatever the
    ceiling: maximizing fitness is minimizing risk.
    """
    if not candidates:
        raise ConfigError("need at least one candidate parameter setting")
    risks = []
    for candidate in candidates:
        logits = candidate.forward_batch(Tensor(dataset.images)).values
        losses = _eval_losses(softmax_rows(logits), dataset.labels, loss_cfg)
        if losses.max() >= fitness_ceiling:
            raise ConfigError(
                f"fitness ceiling {fitness_ceiling} not above max loss "
                f"{losses.max()}; fitness would go non-positive"
            )
        risks.append(float(losses.mean()))
    risks_arr = np.array(risks)
    fitness_arr = fitness_ceiling - risks_arr
    risk_order = tuple(int(i) for i in np.argsort(risks_arr, kind="stable"))
    fitness_order = tuple(int(i) for i in
                          np.argsort(-fitness_arr, kind="stable"))
    all_tied = np.unique(risks_arr).size == 1
    return DualityReport(
        mean_risks=tuple(risks),
        mean_fitnesses=tuple(float(f) for f in fitness_arr),
        risk_order=risk_order,
        fitness_order=fitness_order,
        spearman=None if all_tied else _spearman(risks_arr, fitness_arr),
    )


def _format_float(x: float) -> str:
    return repr(float(x))


def _format_vector(values) -> str:
    if values is None:
        return ""
    return ";".join(_format_float(v) for v in values)


def _parse_vector(text: str):
    if text == "":
        return None
    return tuple(float(tok) for tok in text.split(";"))


def write_metrics_csv(path, records) -> None:
    """One row per record, columns exactly the record fields."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_METRICS_COLUMNS)
        for r in records:
            writer.writerow([
                r.epoch, r.split, _format_float(r.mean_loss),
                _format_float(r.accuracy),
                _format_vector(r.per_class_accuracy),
                _format_vector(r.per_class_ns),
                _format_float(r.seconds), r.train_forward_passes,
                r.ns_forward_passes, _format_float(r.ns_seconds),
            ])


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != _METRICS_COLUMNS:
        raise ConfigError(f"{path} is not a metrics CSV")
    records = []
    for row in rows[1:]:
        records.append(MetricsRecord(
            epoch=int(row[0]), split=row[1], mean_loss=float(row[2]),
            accuracy=float(row[3]),
            per_class_accuracy=_parse_vector(row[4]) or (),
            per_class_ns=_parse_vector(row[5]), seconds=float(row[6]),
            train_forward_passes=int(row[7]), ns_forward_passes=int(row[8]),
            ns_seconds=float(row[9]),
        ))
    return records


def deterministic_csv_bytes(path) -> bytes:
    """Metrics CSV bytes with the wall-clock columns removed.

    Wall-clock time differs between reruns of an otherwise deterministic
    job; everything else must be byte-identical.
    """
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return b""
    drop = [i for i, name in enumerate(rows[0]) if name in _TIMING_COLUMNS]
    keep = [i for i in range(len(rows[0])) if i not in drop]
    out = io.StringIO()
    writer = csv.writer(out)
    for row in rows:
        writer.writerow([row[i] for i in keep])
    return out.getvalue().encode("utf-8")

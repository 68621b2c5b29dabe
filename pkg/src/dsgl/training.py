"""Mini-batch training with periodic validation, early stopping and
best-checkpoint selection. Everything is deterministic given (seed, data,
config): shuffles are seeded per epoch and evaluation order is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics
from . import tensor as T
from .graphs import BehaviorIndex, batch_dsgs
from .model import ModelConfig, ModelParams, forward_scores, prediction_loss


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the step and batch index."""

    def __init__(self, step: int, batch_index: int):
        super().__init__(f"non-finite loss at step {step} (epoch batch {batch_index}); "
                         "lower the learning rate or check the data")
        self.step = step
        self.batch_index = batch_index


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr: float = 0.001
    max_steps: int = 5000
    eval_every: int = 100
    patience: int = 10
    seed: int = 0
    precision: str = "f64"
    index_scope: str = "train_only"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        if self.index_scope not in ("train_only", "causal_all"):
            raise ValueError(f"unknown index_scope {self.index_scope!r}")


@dataclass
class EvalRecord:
    step: int
    train_loss: float
    valid_auc: float
    valid_logloss: float


@dataclass
class RunReport:
    """Metrics trace of one training run."""

    records: list[EvalRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_step: int = 0
    best_valid_auc: float = float("-inf")
    stopped_reason: str = ""

    def to_lines(self) -> list[str]:
        lines = [f"step={r.step} loss={r.train_loss:.6f} valid_auc={r.valid_auc:.6f} "
                 f"valid_logloss={r.valid_logloss:.6f}" for r in self.records]
        lines.append(f"best_step={self.best_step} best_auc={self.best_valid_auc:.6f} "
                     f"reason={self.stopped_reason}")
        return lines

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def parse(cls, path) -> "RunReport":
        report = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                kv = dict(part.split("=") for part in line.split())
                if "best_step" in kv:
                    report.best_step = int(kv["best_step"])
                    report.best_valid_auc = float(kv["best_auc"])
                    report.stopped_reason = kv["reason"]
                elif "step" in kv:
                    report.records.append(EvalRecord(
                        int(kv["step"]), float(kv["loss"]),
                        float(kv["valid_auc"]), float(kv["valid_logloss"])))
        return report


def predict_scores(params: ModelParams, cfg: ModelConfig, samples,
                   index: BehaviorIndex, batch_size: int = 256) -> np.ndarray:
    """Forward-only scores for a list of samples, in their given order."""
    out = []
    for lo in range(0, len(samples), batch_size):
        batch = batch_dsgs(index, samples[lo : lo + batch_size], cfg.spec)
        out.append(forward_scores(params, cfg, batch).data)
    if not out:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(out)


def evaluate(params: ModelParams, cfg: ModelConfig, samples, index: BehaviorIndex,
             batch_size: int = 256) -> tuple[float, float]:
    """(AUC, logloss) of frozen parameters on labeled samples.

    Raises UndefinedMetricError for single-class data, with the logloss
    attached to the exception since it is still well defined.
    """
    if not samples:
        raise ValueError("evaluate needs a non-empty sample list")
    scores = predict_scores(params, cfg, samples, index, batch_size)
    labels = np.array([s.label for s in samples])
    ll = metrics.logloss(scores, labels)
    try:
        return metrics.auc(scores, labels), ll
    except metrics.UndefinedMetricError as exc:
        raise metrics.UndefinedMetricError(str(exc), logloss=ll) from None


def train(cfg: ModelConfig, train_samples, valid_samples, index: BehaviorIndex,
          tcfg: TrainConfig) -> tuple[ModelParams, RunReport]:
    """Run Adam over shuffled mini-batches with early stopping.

    Every ``eval_every`` steps the validation AUC is measured; training stops
    when it has not increased for ``patience`` consecutive evaluations or at
    ``max_steps``. Returns the parameter snapshot from the best evaluation
    together with the run report.
    """
    tcfg.validate()
    if not train_samples:
        raise ValueError("train needs a non-empty training set")
    if not valid_samples:
        raise ValueError("train needs a non-empty validation set")
    with T.using_dtype(tcfg.precision):
        params = ModelParams(cfg, seed=tcfg.seed)
        opt = T.Adam(params.tensors, lr=tcfg.lr)
        report = RunReport()
        best_params = params.clone()
        stale_evals = 0
        epoch = 0
        order = np.random.default_rng((tcfg.seed, epoch)).permutation(len(train_samples))
        cursor = 0
        interval_losses: list[float] = []
        for step in range(1, tcfg.max_steps + 1):
            if cursor >= len(order):
                epoch += 1
                order = np.random.default_rng((tcfg.seed, epoch)).permutation(len(train_samples))
                cursor = 0
            batch_index = cursor // tcfg.batch_size
            take = order[cursor : cursor + tcfg.batch_size]
            cursor += tcfg.batch_size
            samples = [train_samples[i] for i in take]
            batch = batch_dsgs(index, samples, cfg.spec)
            labels = np.array([s.label for s in samples])
            with T.Tape() as tape:
                scores = forward_scores(params, cfg, batch)
                loss = prediction_loss(scores, labels, reduction=cfg.loss_reduction)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise TrainingDivergedError(step, batch_index)
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            report.step_losses.append(loss_val)
            interval_losses.append(loss_val)
            if step % tcfg.eval_every == 0:
                auc, ll = evaluate(params, cfg, valid_samples, index)
                report.records.append(EvalRecord(step, float(np.mean(interval_losses)), auc, ll))
                interval_losses = []
                if auc > report.best_valid_auc:
                    report.best_valid_auc = auc
                    report.best_step = step
                    best_params = params.clone()
                    stale_evals = 0
                else:
                    stale_evals += 1
                    if stale_evals >= tcfg.patience:
                        report.stopped_reason = "early_stop"
                        return best_params, report
        report.stopped_reason = "max_steps"
        return best_params, report


class PopularityModel:
    """Global item-frequency scorer, the sanity baseline.

    Scores are train-set interaction counts squashed into (0, 1); only their
    order matters for AUC.
    """

    def __init__(self):
        self.counts: dict[int, int] = {}
        self.max_count = 0

    def fit(self, log) -> "PopularityModel":
        for e in log:
            if e.label == 1:
                self.counts[e.item_id] = self.counts.get(e.item_id, 0) + 1
        self.max_count = max(self.counts.values(), default=0)
        return self

    def score_samples(self, samples) -> np.ndarray:
        denom = self.max_count + 1.0
        return np.array([(self.counts.get(s.item_id, 0) + 0.5) / (denom + 1.0)
                         for s in samples])

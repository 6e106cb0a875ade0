"""Validation-gated training loop with per-stage adaptive spread and weights.

Each epoch trains the classifier by SGD on the configured loss, evaluates
mean absolute error on the validation split, and snapshots (model, stage
parameters) whenever that error reaches a new minimum. Between epochs the
per-stage sigma and alpha values are perturbed by a proposal mechanism
(deterministic grid coordinate search by default, or gradient steps on the
raw parameterizations); proposals only survive if validation improves.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import evaluation
from .core import SIGMA_MIN, LabelSupport, LossBreakdown, kl_gradient_sigma
from .data import Dataset
from .errors import (
    EmptyInputError,
    InvalidInputError,
    InvalidParameterError,
    TrainingDivergedError,
)
from .model import (
    Model,
    backward_step,
    model_from_dict,
    model_to_dict,
    predict_ages,
)
from .staging import StagePartition

ADAPTATION_MODES = ("grid", "gradient")
PREDICTION_RULES = ("expectation", "argmax")
LOSS_MODES = ("kl", "ce", "saw")

# Keeps alphas strictly inside (0, 1) even for extreme raw values.
_ALPHA_EPS = 1e-15


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise InvalidParameterError("softplus inverse needs positive input")
    return y + np.log1p(-np.exp(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, _ALPHA_EPS, 1.0 - _ALPHA_EPS)


def logit(a):
    a = np.asarray(a, dtype=np.float64)
    if np.any((a <= 0) | (a >= 1)):
        raise InvalidParameterError("logit needs values strictly in (0, 1)")
    return np.log(a / (1.0 - a))


@dataclass(frozen=True)
class StageParams:
    """Per-stage spread and loss weight, stored in unconstrained form.

    sigma = SIGMA_MIN + softplus(raw_sigma) keeps every spread above the
    floor; alpha = logistic(raw_alpha) keeps weights strictly in (0, 1).
    """

    raw_sigma: np.ndarray
    raw_alpha: np.ndarray

    def __post_init__(self):
        rs = np.asarray(self.raw_sigma, dtype=np.float64)
        ra = np.asarray(self.raw_alpha, dtype=np.float64)
        if rs.shape != ra.shape or rs.ndim != 1 or rs.size < 1:
            raise InvalidParameterError(
                f"stage parameter vectors disagree: {rs.shape} vs {ra.shape}"
            )
        object.__setattr__(self, "raw_sigma", rs)
        object.__setattr__(self, "raw_alpha", ra)

    @property
    def k(self) -> int:
        return self.raw_sigma.size

    @property
    def sigmas(self) -> np.ndarray:
        return SIGMA_MIN + softplus(self.raw_sigma)

    @property
    def alphas(self) -> np.ndarray:
        return sigmoid(self.raw_alpha)

    @classmethod
    def initial(cls, k: int) -> "StageParams":
        return cls(raw_sigma=np.zeros(k), raw_alpha=np.zeros(k))

    @classmethod
    def from_values(cls, sigmas, alphas) -> "StageParams":
        sigmas = np.asarray(sigmas, dtype=np.float64)
        if np.any(sigmas <= SIGMA_MIN):
            raise InvalidParameterError(f"sigmas must exceed {SIGMA_MIN}")
        return cls(raw_sigma=softplus_inv(sigmas - SIGMA_MIN), raw_alpha=logit(alphas))

    def copy(self) -> "StageParams":
        return StageParams(raw_sigma=self.raw_sigma.copy(),
                           raw_alpha=self.raw_alpha.copy())

    def with_sigma(self, stage: int, sigma: float) -> "StageParams":
        raw = self.raw_sigma.copy()
        raw[stage] = softplus_inv(sigma - SIGMA_MIN)
        return StageParams(raw_sigma=raw, raw_alpha=self.raw_alpha.copy())

    def with_alpha(self, stage: int, alpha: float) -> "StageParams":
        raw = self.raw_alpha.copy()
        raw[stage] = logit(alpha)
        return StageParams(raw_sigma=self.raw_sigma.copy(), raw_alpha=raw)

    def equals(self, other: "StageParams") -> bool:
        return (np.array_equal(self.raw_sigma, other.raw_sigma)
                and np.array_equal(self.raw_alpha, other.raw_alpha))

    def to_dict(self) -> dict:
        return {
            "raw_sigma": [float(v) for v in self.raw_sigma],
            "raw_alpha": [float(v) for v in self.raw_alpha],
            "sigma_min": SIGMA_MIN,
            "sigmas": [float(v) for v in self.sigmas],
            "alphas": [float(v) for v in self.alphas],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageParams":
        return cls(raw_sigma=np.array(d["raw_sigma"], dtype=np.float64),
                   raw_alpha=np.array(d["raw_alpha"], dtype=np.float64))


@dataclass
class TrainConfig:
    """Knobs for one training run; validated on construction."""

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    stage_lr: float = 0.05
    adaptation_mode: str = "grid"
    sigma_grid: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    alpha_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    seed: int = 0
    prediction_rule: str = "expectation"
    cs_threshold: float = 5.0
    sav: bool = True
    loss_mode: str = "saw"
    fixed_sigma: float = 2.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidParameterError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or self.stage_lr < 0:
            raise InvalidParameterError("learning_rate must be > 0, stage_lr >= 0")
        if self.adaptation_mode not in ADAPTATION_MODES:
            raise InvalidParameterError(f"adaptation_mode must be one of {ADAPTATION_MODES}")
        if self.prediction_rule not in PREDICTION_RULES:
            raise InvalidParameterError(f"prediction_rule must be one of {PREDICTION_RULES}")
        if self.loss_mode not in LOSS_MODES:
            raise InvalidParameterError(f"loss_mode must be one of {LOSS_MODES}")
        if self.cs_threshold < 0:
            raise InvalidParameterError("cs_threshold must be >= 0")
        self.sigma_grid = tuple(float(v) for v in self.sigma_grid)
        self.alpha_grid = tuple(float(v) for v in self.alpha_grid)
        if not self.sigma_grid or any(v <= SIGMA_MIN for v in self.sigma_grid):
            raise InvalidParameterError(f"sigma grid values must exceed {SIGMA_MIN}")
        if not self.alpha_grid or any(not 0 < v < 1 for v in self.alpha_grid):
            raise InvalidParameterError("alpha grid values must lie in (0, 1)")
        if self.fixed_sigma <= SIGMA_MIN:
            raise InvalidParameterError(f"fixed_sigma must exceed {SIGMA_MIN}")

    @property
    def adapt_sigma(self) -> bool:
        # sigma never enters a pure-CE objective, so there is nothing to adapt
        return self.sav and self.loss_mode != "ce"

    @property
    def adapt_alpha(self) -> bool:
        return self.loss_mode == "saw"


def initial_stage_params(k: int, config: TrainConfig) -> StageParams:
    """Default starting point: adaptive runs start at the parameterization
    origin (sigma just under 1, alpha 0.5); with adaptation off, sigma is
    pinned to the configured fixed value."""
    params = StageParams.initial(k)
    if not config.sav:
        params = StageParams.from_values(np.full(k, config.fixed_sigma),
                                         params.alphas)
    return params


@dataclass
class GridState:
    """Deterministic coordinate-search cursor.

    Proposals visit stages round-robin; an active stage alternates between
    its sigma move and its alpha move, each advancing that stage's own
    pointer through the grid cyclically. The walk order is independent of
    which proposals get accepted.
    """

    k: int
    adapt_sigma: bool
    adapt_alpha: bool
    stage_ptr: int = 0
    sigma_ptr: list[int] = field(default_factory=list)
    alpha_ptr: list[int] = field(default_factory=list)
    next_is_sigma: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.sigma_ptr:
            self.sigma_ptr = [0] * self.k
        if not self.alpha_ptr:
            self.alpha_ptr = [0] * self.k
        if not self.next_is_sigma:
            self.next_is_sigma = [True] * self.k


def propose_stage_update(params: StageParams, mode: str, *,
                         grid_state: GridState | None = None,
                         sigma_grid: tuple[float, ...] = (),
                         alpha_grid: tuple[float, ...] = (),
                         sigma_grads: np.ndarray | None = None,
                         alpha_grads: np.ndarray | None = None,
                         stage_lr: float = 0.0) -> StageParams:
    """Next candidate stage parameters.

    grid mode advances one (stage, parameter) coordinate per call, mutating
    ``grid_state``; gradient mode takes one descent step on the raw
    parameterizations using the supplied accumulated gradients (a missing
    gradient leaves that parameter untouched).
    """
    if mode == "gradient":
        raw_sigma = params.raw_sigma.copy()
        raw_alpha = params.raw_alpha.copy()
        if sigma_grads is not None:
            raw_sigma -= stage_lr * np.asarray(sigma_grads, dtype=np.float64)
        if alpha_grads is not None:
            raw_alpha -= stage_lr * np.asarray(alpha_grads, dtype=np.float64)
        return StageParams(raw_sigma=raw_sigma, raw_alpha=raw_alpha)
    if mode != "grid":
        raise InvalidParameterError(f"adaptation mode must be one of {ADAPTATION_MODES}")
    if grid_state is None:
        raise InvalidParameterError("grid mode needs a GridState")

    st = grid_state
    if not (st.adapt_sigma or st.adapt_alpha):
        return params.copy()
    s = st.stage_ptr
    use_sigma = st.adapt_sigma and (st.next_is_sigma[s] or not st.adapt_alpha)
    if use_sigma:
        candidate = sigma_grid[st.sigma_ptr[s]]
        st.sigma_ptr[s] = (st.sigma_ptr[s] + 1) % len(sigma_grid)
        out = params.with_sigma(s, candidate)
    else:
        candidate = alpha_grid[st.alpha_ptr[s]]
        st.alpha_ptr[s] = (st.alpha_ptr[s] + 1) % len(alpha_grid)
        out = params.with_alpha(s, candidate)
    if st.adapt_sigma and st.adapt_alpha:
        st.next_is_sigma[s] = not st.next_is_sigma[s]
    st.stage_ptr = (s + 1) % st.k
    return out


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    total: float
    kl: float
    ce: float
    mse: float
    alpha_mean: float
    val_l1: float
    val_mae: float
    snapshot: bool
    best_val_l1: float
    sigmas: tuple[float, ...]
    alphas: tuple[float, ...]


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def accepted_l1(self) -> list[float]:
        """Validation L1 values at snapshot events, in order."""
        return [r.val_l1 for r in self.records if r.snapshot]

    def to_dicts(self) -> list[dict]:
        out = []
        for r in self.records:
            d = {
                "epoch": r.epoch, "objective": r.objective, "total": r.total,
                "kl": r.kl, "ce": r.ce, "mse": r.mse, "alpha_mean": r.alpha_mean,
                "val_l1": r.val_l1, "val_mae": r.val_mae,
                "snapshot": r.snapshot, "best_val_l1": r.best_val_l1,
                "sigmas": list(r.sigmas), "alphas": list(r.alphas),
            }
            out.append(d)
        return out

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dicts(), fh, indent=2)
            fh.write("\n")

    def to_csv(self, path) -> None:
        k = len(self.records[0].sigmas) if self.records else 0
        header = (["epoch", "objective", "total", "kl", "ce", "mse", "alpha_mean",
                   "val_l1", "val_mae", "snapshot", "best_val_l1"]
                  + [f"sigma_{s}" for s in range(k)]
                  + [f"alpha_{s}" for s in range(k)])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for r in self.records:
                row = ([r.epoch] + [repr(float(v)) for v in
                                    (r.objective, r.total, r.kl, r.ce, r.mse,
                                     r.alpha_mean, r.val_l1, r.val_mae)]
                       + [int(r.snapshot), repr(float(r.best_val_l1))]
                       + [repr(float(v)) for v in r.sigmas]
                       + [repr(float(v)) for v in r.alphas])
                writer.writerow(row)


def evaluate_l1(model: Model, data: Dataset, prediction_rule: str = "expectation") -> float:
    """Mean absolute error of the model's age read-out over a dataset."""
    if len(data) == 0:
        raise EmptyInputError("cannot evaluate on an empty dataset")
    preds = predict_ages(model, data.features_matrix(), data.support, prediction_rule)
    return float(np.mean(np.abs(preds - data.labels_array())))


def _objective_from_stats(loss_mode: str, stats) -> np.ndarray:
    if loss_mode == "saw":
        return (stats.alphas * stats.kl + (1.0 - stats.alphas) * stats.ce
                + 0.01 * stats.mse)
    if loss_mode == "kl":
        return stats.kl
    return stats.ce


def train_sav(train: Dataset, val: Dataset, partition: StagePartition,
              model0: Model, params0: StageParams, config: TrainConfig
              ) -> tuple[Model, StageParams, TrainHistory]:
    """Outer training loop; returns the last validation-accepted snapshot.

    Epoch 0 trains at the initial stage parameters to establish a baseline;
    later epochs first apply one proposal on top of the accepted parameters,
    then train, then keep the proposal only if validation L1 reaches a new
    minimum. The model itself always keeps training forward (only snapshots
    are gated), mirroring a single continuous SGD trajectory.
    """
    if len(train) == 0 or len(val) == 0:
        raise EmptyInputError("train and validation splits must be non-empty")
    if params0.k != partition.k:
        raise InvalidParameterError(
            f"stage params have {params0.k} stages, partition has {partition.k}"
        )
    support = train.support
    history = TrainHistory()
    if config.epochs == 0:
        return model0.copy(), params0.copy(), history

    rng = np.random.default_rng(config.seed)
    model = model0.copy()
    params_accepted = params0.copy()
    best_model = model0.copy()
    best_params = params0.copy()
    min_l1 = float("inf")
    # in gradient mode the grid cursor owns only the alpha coordinate
    grid_state = GridState(
        k=partition.k,
        adapt_sigma=config.adapt_sigma and config.adaptation_mode == "grid",
        adapt_alpha=config.adapt_alpha)
    adapting = config.adapt_sigma or config.adapt_alpha
    last_sigma_grads: np.ndarray | None = None

    features = train.features_matrix()
    labels = train.labels_array()
    n = len(train)

    for epoch in range(config.epochs):
        if adapting and epoch > 0:
            if config.adaptation_mode == "grid":
                params_current = propose_stage_update(
                    params_accepted, "grid", grid_state=grid_state,
                    sigma_grid=config.sigma_grid, alpha_grid=config.alpha_grid)
            else:
                params_current = params_accepted
                if config.adapt_alpha:
                    params_current = propose_stage_update(
                        params_current, "grid", grid_state=grid_state,
                        sigma_grid=config.sigma_grid, alpha_grid=config.alpha_grid)
                if config.adapt_sigma and last_sigma_grads is not None:
                    params_current = propose_stage_update(
                        params_current, "gradient", sigma_grads=last_sigma_grads,
                        stage_lr=config.stage_lr)
        else:
            params_current = params_accepted

        order = rng.permutation(n)
        sums = {"wkl": 0.0, "wce": 0.0, "kl": 0.0, "ce": 0.0, "mse": 0.0,
                "alpha": 0.0, "obj": 0.0}
        sig_grad_sum = np.zeros(partition.k)
        stage_counts = np.zeros(partition.k)
        sig_sigmoid = sigmoid(params_current.raw_sigma)

        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch_labels = labels[idx]
            try:
                model, _, stats = backward_step(
                    model, features[idx], batch_labels, params_current, partition,
                    config.learning_rate, support, loss_mode=config.loss_mode,
                    return_stats=True)
            except InvalidInputError as exc:
                raise TrainingDivergedError(
                    f"non-finite state at epoch {epoch}: {exc}", history=history
                ) from exc
            obj = _objective_from_stats(config.loss_mode, stats)
            if not np.all(np.isfinite(obj)):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", history=history)
            sums["wkl"] += float(np.dot(stats.alphas, stats.kl))
            sums["wce"] += float(np.dot(1.0 - stats.alphas, stats.ce))
            sums["kl"] += float(stats.kl.sum())
            sums["ce"] += float(stats.ce.sum())
            sums["mse"] += float(stats.mse.sum())
            sums["alpha"] += float(stats.alphas.sum())
            sums["obj"] += float(obj.sum())
            if config.adaptation_mode == "gradient" and config.adapt_sigma:
                for i in range(len(idx)):
                    s = stats.stage_idx[i]
                    g = kl_gradient_sigma(int(batch_labels[i]), float(stats.sigmas[i]),
                                          stats.preds[i], support)
                    if config.loss_mode == "saw":
                        g *= stats.alphas[i]
                    sig_grad_sum[s] += g * sig_sigmoid[s]
            np.add.at(stage_counts, stats.stage_idx, 1.0)

        mean_alpha = sums["alpha"] / n
        epoch_breakdown = LossBreakdown.compose(
            kl=sums["wkl"] / sums["alpha"],
            ce=sums["wce"] / (n - sums["alpha"]),
            mse=sums["mse"] / n,
            alpha=mean_alpha)
        if config.adaptation_mode == "gradient":
            nz = stage_counts > 0
            last_sigma_grads = np.where(nz, sig_grad_sum / np.maximum(stage_counts, 1), 0.0)

        val_preds = predict_ages(model, val.features_matrix(), support,
                                 config.prediction_rule)
        if not np.all(np.isfinite(val_preds)):
            raise TrainingDivergedError(
                f"non-finite validation predictions at epoch {epoch}", history=history)
        l1 = float(np.mean(np.abs(val_preds - val.labels_array())))
        val_mae = evaluation.mae(val_preds, val.labels_array())

        improved = l1 < min_l1
        if improved:
            min_l1 = l1
            best_model = model.copy()
            best_params = params_current.copy()
            params_accepted = params_current
        history.records.append(EpochRecord(
            epoch=epoch,
            objective=sums["obj"] / n,
            total=epoch_breakdown.total,
            kl=epoch_breakdown.kl,
            ce=epoch_breakdown.ce,
            mse=epoch_breakdown.mse,
            alpha_mean=epoch_breakdown.alpha_used,
            val_l1=l1,
            val_mae=val_mae,
            snapshot=improved,
            best_val_l1=min_l1,
            sigmas=tuple(float(v) for v in params_current.sigmas),
            alphas=tuple(float(v) for v in params_current.alphas),
        ))

    return best_model, best_params, history


CHECKPOINT_FORMAT = "saldl-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: Model, stage_params: StageParams,
                    partition: StagePartition) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "support": {"min_label": partition.support.min_label,
                    "max_label": partition.support.max_label},
        "model": model_to_dict(model),
        "stage_params": stage_params.to_dict(),
        "partition": partition.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Model, StageParams, StagePartition, LabelSupport]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidParameterError(
            f"unsupported checkpoint format {doc.get('format')!r} "
            f"v{doc.get('version')!r}")
    support = LabelSupport(int(doc["support"]["min_label"]),
                           int(doc["support"]["max_label"]))
    model = model_from_dict(doc["model"])
    params = StageParams.from_dict(doc["stage_params"])
    partition = StagePartition.from_dict(doc["partition"], support)
    return model, params, partition, support

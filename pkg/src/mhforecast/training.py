"""Relaxed winner-takes-all training with confidence calibration.

Per window, each head's trajectory is scored by mean squared error in
normalized space; the head with the smallest loss is the winner. The
objective gives the winner a (1 - epsilon) share of the gradient and
splits epsilon evenly over the losers, so no head is ever starved
completely. Confidence heads are trained with binary cross-entropy to
predict the winner, weighted into the total by beta.

Winner selection is a hard, non-differentiated assignment per step: the
loss values decide the weighting, then the weighting is treated as a
constant while gradients flow through all K heads.

``fit`` records one tape per batch that evaluates the arithmetic mean of
the per-window objectives (the weighting enters as a constant matrix), so
the gradient is identical to averaging per-window tapes but the tape is
built once per batch. The per-window form remains available as
:func:`total_loss` and the two are asserted equal in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, backward
from .errors import ConfigError, DataError, NumericError, ShapeError
from .metrics import distortion_stack
from .model import (
    ModelConfig,
    ModelParams,
    forward_batch,
    grads_by_name,
    init_params,
    param_leaves,
    record_network,
)
from .normalization import batch_stats, normalize_batch

CONF_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; defaults follow the training protocol."""

    relax_epsilon: float = 0.1
    beta: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 200
    batches_per_epoch: int = 30
    batch_size: int = 200
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.relax_epsilon < 1.0:
            raise ConfigError(f"relax_epsilon must be in [0, 1), got {self.relax_epsilon}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        for name in ("epochs", "batches_per_epoch", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


# --- per-window loss surface ---


def per_head_loss(hyps_norm, y_norm: np.ndarray) -> np.ndarray:
    """Mean squared error of each hypothesis, normalized by H*D exactly."""
    hyps = np.asarray(hyps_norm, dtype=np.float64)
    y = np.asarray(y_norm, dtype=np.float64)
    if hyps.ndim != 3 or hyps.shape[1:] != y.shape:
        raise ShapeError(f"hypothesis stack {hyps.shape} does not match target {y.shape}")
    return np.mean((hyps - y) ** 2, axis=(1, 2))


def select_winner(losses) -> int:
    """Index of the minimal loss; ties break to the lowest index."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 1:
        raise ConfigError("select_winner needs at least one loss")
    for k, v in enumerate(losses):
        if np.isnan(v):
            raise NumericError(f"loss for head {k} is NaN")
    return int(np.argmin(losses))


def rwta_loss(losses, relax_epsilon: float) -> float:
    """(1 - eps) * winning loss + eps/(K-1) * sum of the losing losses."""
    losses = np.asarray(losses, dtype=np.float64)
    k = losses.size
    if k == 1:
        if relax_epsilon > 0.0:
            raise ConfigError("relax_epsilon > 0 requires at least two heads")
        return float(losses[0])
    star = select_winner(losses)
    others = np.delete(losses, star)
    return float((1.0 - relax_epsilon) * losses[star] + relax_epsilon / (k - 1) * others.sum())


def score_loss(confidences, winner: int) -> float:
    """Binary cross-entropy against the winner indicator, averaged by 1/K."""
    c = np.clip(np.asarray(confidences, dtype=np.float64), CONF_CLAMP, 1.0 - CONF_CLAMP)
    k = c.size
    total = np.log(c[winner]) + np.log(1.0 - np.delete(c, winner)).sum()
    return float(-total / k)


def utilization_entropy(hist) -> float:
    """Shannon entropy (nats) of the winner-frequency histogram."""
    hist = np.asarray(hist, dtype=np.float64)
    total = hist.sum()
    if total <= 0:
        raise DataError("utilization histogram is empty")
    p = hist / total
    p = p[p > 0]
    return float(max(0.0, -(p * np.log(p)).sum()))


# --- tape construction ---


@dataclass
class TotalLoss:
    """A recorded objective: tape, scalar root, and diagnostics."""

    tape: Tape
    root: int
    param_nodes: dict
    winners: np.ndarray  # (B,)
    per_head: np.ndarray  # (B, K) loss values
    confidences: np.ndarray  # (B, K)
    rwta: float
    score: float

    @property
    def winner(self) -> int:
        return int(self.winners[0])


def record_loss(
    tape: Tape,
    pnodes: dict,
    x_norm: np.ndarray,
    y_norm: np.ndarray,
    cfg_model: ModelConfig,
    cfg_train: TrainConfig,
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, float, float]:
    """Record the mean objective of a stack of normalized window pairs."""
    b = x_norm.shape[0]
    k, hd = cfg_model.K, cfg_model.flat_dim
    eps = cfg_train.relax_epsilon
    if k == 1 and eps > 0.0:
        raise ConfigError("relax_epsilon > 0 requires at least two heads")

    _, traj_vecs, conf_cols = record_network(tape, pnodes, x_norm, cfg_model)
    y_vec = tape.leaf(y_norm.reshape(b, hd))
    col_mean = tape.leaf(np.full((hd, 1), 1.0 / hd))
    loss_cols = []
    for tv in traj_vecs:
        sq = dc.square(tape, dc.sub(tape, tv, y_vec))
        loss_cols.append(dc.matmul(tape, sq, col_mean))
    lmat = loss_cols[0] if k == 1 else dc.concat_cols(tape, *loss_cols)
    lvals = tape.value(lmat)
    if np.isnan(lvals).any():
        bad = int(np.argwhere(np.isnan(lvals).any(axis=0))[0, 0])
        raise NumericError(f"loss for head {bad} is NaN")
    winners = np.argmin(lvals, axis=1)

    if k == 1:
        weights = np.ones((b, 1))
    else:
        weights = np.full((b, k), eps / (k - 1))
        weights[np.arange(b), winners] = 1.0 - eps
    rwta_node = dc.scale(tape, dc.sum_all(tape, dc.mul(tape, lmat, tape.leaf(weights))), 1.0 / b)

    gmat = conf_cols[0] if k == 1 else dc.concat_cols(tape, *conf_cols)
    indicator = np.zeros((b, k))
    indicator[np.arange(b), winners] = 1.0
    pos = dc.mul(tape, tape.leaf(indicator), dc.log(tape, gmat))
    ones = tape.leaf(np.ones((b, k)))
    neg = dc.mul(tape, tape.leaf(1.0 - indicator), dc.log(tape, dc.sub(tape, ones, gmat)))
    score_node = dc.scale(tape, dc.sum_all(tape, dc.add(tape, pos, neg)), -1.0 / (k * b))

    root = dc.add(tape, rwta_node, dc.scale(tape, score_node, cfg_train.beta))
    confs = tape.value(gmat)
    rwta_value = float(tape.value(rwta_node)[0, 0])
    score_value = float(tape.value(score_node)[0, 0])
    return root, winners, lvals, confs, rwta_value, score_value


def _normalized_pair(x_raw: np.ndarray, y_raw: np.ndarray, cfg_model: ModelConfig):
    mu, sigma = batch_stats(x_raw, cfg_model.norm)
    return normalize_batch(x_raw, mu, sigma), normalize_batch(y_raw, mu, sigma)


def batch_total_loss(
    x_raw: np.ndarray,
    y_raw: np.ndarray,
    params: ModelParams,
    cfg_model: ModelConfig,
    cfg_train: TrainConfig,
) -> TotalLoss:
    """Mean objective over a stack of raw window pairs, on a fresh tape."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    y_raw = np.asarray(y_raw, dtype=np.float64)
    if x_raw.shape[0] != y_raw.shape[0]:
        raise ShapeError(f"batch sizes differ: {x_raw.shape[0]} vs {y_raw.shape[0]}")
    xn, yn = _normalized_pair(x_raw, y_raw, cfg_model)
    tape = Tape()
    pnodes = param_leaves(tape, params)
    root, winners, lvals, confs, rwta, score = record_loss(
        tape, pnodes, xn, yn, cfg_model, cfg_train
    )
    return TotalLoss(tape, root, pnodes, winners, lvals, confs, rwta, score)


def total_loss(
    x_raw: np.ndarray,
    y_raw: np.ndarray,
    params: ModelParams,
    cfg_model: ModelConfig,
    cfg_train: TrainConfig,
) -> TotalLoss:
    """The objective of a single window pair as a scalar node on a tape."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    y_raw = np.asarray(y_raw, dtype=np.float64)
    if x_raw.ndim != 2 or y_raw.ndim != 2:
        raise ShapeError("total_loss expects single (L, D) and (H, D) windows")
    return batch_total_loss(x_raw[None], y_raw[None], params, cfg_model, cfg_train)


# --- optimizer ---


@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name."""

    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(a) for name, a in params.named_arrays()},
            v={name: np.zeros_like(a) for name, a in params.named_arrays()},
        )


def adam_step(
    params: ModelParams,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_opt: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected moment update, applied elementwise in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, arr in params.named_arrays():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps_opt)
    return params, state


# --- training loop ---


@dataclass
class EpochStats:
    rwta_loss: float
    score_loss: float
    val_distortion: float
    utilization: np.ndarray  # (K,) winner counts this epoch
    entropy: float


@dataclass
class TrainReport:
    """Per-epoch diagnostics plus early-stopping bookkeeping."""

    epochs: list = field(default_factory=list)  # list[EpochStats]
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)

    @property
    def best_val_distortion(self) -> float:
        return self.epochs[self.best_epoch - 1].val_distortion

    @property
    def final_entropy(self) -> float:
        return self.epochs[-1].entropy

    def total_utilization(self) -> np.ndarray:
        return np.sum([e.utilization for e in self.epochs], axis=0)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "best_val_distortion": self.best_val_distortion,
            "final_entropy": self.final_entropy,
            "total_utilization": [int(c) for c in self.total_utilization()],
        }


def _stack_windows(values: np.ndarray, origins: np.ndarray, length: int, horizon: int):
    x = np.stack([values[o : o + length] for o in origins])
    y = np.stack([values[o + length : o + length + horizon] for o in origins])
    return x, y


def fit(dataset, cfg_model: ModelConfig, cfg_train: TrainConfig, *, log=None):
    """Windowed training with early stopping on validation distortion.

    Returns the best-validation parameters and a :class:`TrainReport`.
    Deterministic given the two seeds (init_seed in the model config, seed
    in the train config).
    """
    length, horizon, k = cfg_model.L, cfg_model.H, cfg_model.K
    if dataset.D != cfg_model.D:
        raise ShapeError(f"dataset has D={dataset.D}, model expects D={cfg_model.D}")
    if k == 1 and cfg_train.relax_epsilon > 0.0:
        raise ConfigError("relax_epsilon > 0 requires at least two heads")
    window = length + horizon
    max_origin = dataset.train_end - window
    if max_origin < 0:
        raise DataError(
            f"training split has {dataset.train_end} rows; needs at least {window}"
        )
    from .data import eval_windows_arrays  # local import to avoid a cycle

    x_val, y_val, _ = eval_windows_arrays(dataset, length, horizon, "val")

    rng = np.random.default_rng(cfg_train.seed)
    params = init_params(cfg_model)
    state = AdamState.zeros(params)
    report = TrainReport()
    best_val = np.inf
    best_params = params.copy()
    bad_epochs = 0

    for epoch in range(1, cfg_train.epochs + 1):
        hist = np.zeros(k, dtype=np.int64)
        rwta_sum = 0.0
        score_sum = 0.0
        for _ in range(cfg_train.batches_per_epoch):
            origins = rng.integers(0, max_origin + 1, size=cfg_train.batch_size)
            x, y = _stack_windows(dataset.values, origins, length, horizon)
            tl = batch_total_loss(x, y, params, cfg_model, cfg_train)
            grads = grads_by_name(backward(tl.tape, tl.root), tl.param_nodes, params)
            adam_step(
                params,
                grads,
                state,
                cfg_train.learning_rate,
                cfg_train.adam_beta1,
                cfg_train.adam_beta2,
                cfg_train.adam_eps,
            )
            hist += np.bincount(tl.winners, minlength=k)
            rwta_sum += tl.rwta
            score_sum += tl.score
        hyps, _, _, _, _ = forward_batch(x_val, params, cfg_model)
        val_dist = distortion_stack(hyps, y_val)
        stats = EpochStats(
            rwta_loss=rwta_sum / cfg_train.batches_per_epoch,
            score_loss=score_sum / cfg_train.batches_per_epoch,
            val_distortion=val_dist,
            utilization=hist,
            entropy=utilization_entropy(hist),
        )
        report.epochs.append(stats)
        if log is not None:
            log(
                f"epoch {epoch:4d}  rwta {stats.rwta_loss:.6g}  score {stats.score_loss:.6g}"
                f"  val_distortion {val_dist:.6g}  entropy {stats.entropy:.4f}"
            )
        if val_dist < best_val:
            best_val = val_dist
            best_params = params.copy()
            report.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg_train.patience:
                report.stopped_early = True
                break
    return best_params, report

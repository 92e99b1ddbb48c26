"""Evaluation metrics and efficiency accounting.

Accuracy metrics are computed in the original data scale: distortion is
the mean over windows of the Euclidean distance from the target to its
nearest hypothesis, and CRPS-Sum aggregates channels before scoring the
empirical predictive distribution per step. FLOPs follow the documented
convention below and are cross-checked against an instrumented count of
the recorded forward computation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .diffcore import Tape
from .errors import ConfigError, DataError, ShapeError
from .model import (
    ModelConfig,
    ModelParams,
    forward_batch,
    init_params,
    param_leaves,
    record_network,
)

CRPS_NORM_EPS = 1e-12


def _stack_hypotheses(forecasts) -> tuple[np.ndarray, np.ndarray]:
    """Accept a list of ForecastSet or an (N, K, H, D) array."""
    if hasattr(forecasts, "ndim"):
        hyps = np.asarray(forecasts, dtype=np.float64)
        if hyps.ndim != 4:
            raise ShapeError(f"expected (N, K, H, D) hypotheses, got {hyps.shape}")
        return hyps, np.ones(hyps.shape[:2])
    hyps = np.stack([np.stack(f.hypotheses) for f in forecasts])
    confs = np.stack([np.asarray(f.confidences, dtype=np.float64) for f in forecasts])
    return hyps, confs


def distortion_stack(hyps: np.ndarray, targets: np.ndarray) -> float:
    """Array form of :func:`distortion` over (N, K, H, D) hypotheses."""
    targets = np.asarray(targets, dtype=np.float64)
    if hyps.shape[0] < 1:
        raise DataError("distortion needs at least one window")
    if hyps.shape[0] != targets.shape[0] or hyps.shape[2:] != targets.shape[1:]:
        raise ShapeError(f"hypotheses {hyps.shape} do not match targets {targets.shape}")
    dist = np.sqrt(np.sum((hyps - targets[:, None]) ** 2, axis=(2, 3)))
    return float(dist.min(axis=1).mean())


def distortion(forecasts, targets) -> float:
    """Mean over windows of the distance to the closest hypothesis."""
    hyps, _ = _stack_hypotheses(forecasts)
    return distortion_stack(hyps, np.asarray(targets, dtype=np.float64))


def crps_empirical(samples, y: float, weights=None) -> float:
    """Sample estimator of the squared-CDF-distance score for one value.

    ``(1/K) sum|s_k - y| - (1/(2 K^2)) sum_jk |s_j - s_k|`` for uniform
    weights; with ``weights`` the same energy form with normalized weights.
    """
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size < 1:
        raise DataError("crps_empirical needs at least one sample")
    if weights is None:
        w = np.full(s.size, 1.0 / s.size)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape != s.shape:
            raise ShapeError(f"weights shape {w.shape} does not match samples {s.shape}")
        total = w.sum()
        if total <= 0:
            raise DataError("crps weights must have positive sum")
        w = w / total
    term1 = np.sum(w * np.abs(s - y))
    term2 = 0.5 * np.sum(w[:, None] * w[None, :] * np.abs(s[:, None] - s[None, :]))
    return float(term1 - term2)


def _crps_sum_core(hyps, confs, targets, normalized, confidence_weighted) -> float:
    targets = np.asarray(targets, dtype=np.float64)
    n = hyps.shape[0]
    if n < 1:
        raise DataError("crps_sum needs at least one window")
    if n != targets.shape[0] or hyps.shape[2:] != targets.shape[1:]:
        raise ShapeError(f"hypotheses {hyps.shape} do not match targets {targets.shape}")
    sample_paths = hyps.sum(axis=3)  # (N, K, H)
    target_paths = targets.sum(axis=2)  # (N, H)
    out = 0.0
    for i in range(n):
        w = confs[i] if confidence_weighted else None
        raw = sum(
            crps_empirical(sample_paths[i, :, t], target_paths[i, t], weights=w)
            for t in range(target_paths.shape[1])
        )
        if normalized:
            raw /= np.abs(target_paths[i]).sum() + CRPS_NORM_EPS
        out += raw
    return float(out / n)


def crps_sum(forecasts, targets, *, normalized: bool = True, confidence_weighted: bool = False) -> float:
    """Channel-summed CRPS accumulated over the horizon, averaged over windows.

    Per window the D channels of every hypothesis and of the target are
    summed into paths of length H; the empirical CRPS is scored per step
    and summed over steps. With ``normalized`` (the default) each window's
    sum is divided by the summed absolute target plus 1e-12. Hypotheses
    enter unweighted unless ``confidence_weighted`` is set.
    """
    hyps, confs = _stack_hypotheses(forecasts)
    return _crps_sum_core(hyps, confs, targets, normalized, confidence_weighted)


def covariance_matrix(x: np.ndarray) -> np.ndarray:
    """Sample covariance (1/(T-1)) of the channel columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a (T, D) matrix, got {x.shape}")
    t = x.shape[0]
    if t < 2:
        raise DataError(f"covariance needs T >= 2, got T={t}")
    xc = x - x.mean(axis=0)
    return xc.T @ xc / (t - 1)


def linear_cka(a: np.ndarray, b: np.ndarray) -> float:
    """Linear centered-kernel alignment of two feature matrices in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("linear_cka expects 2-D feature matrices")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise DataError("linear_cka needs at least two rows")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    denom_a = np.linalg.norm(ac.T @ ac)
    denom_b = np.linalg.norm(bc.T @ bc)
    if denom_a == 0.0 or denom_b == 0.0:
        raise DataError("linear_cka is undefined for zero-variance input")
    return float(np.linalg.norm(ac.T @ bc) ** 2 / (denom_a * denom_b))


# --- efficiency accounting ---
#
# FLOP convention (the documented contract):
#   * one multiply-accumulate inside a matrix product  = 2 FLOPs
#   * bias adds, residual adds and activations         = 1 FLOP per element
#   * normalization                                    = 4*L*D
#     (subtract + divide per element, ~2*L*D for the statistics)
#   * de-normalization                                 = 2*H*D per hypothesis
#   * layout permutations and reshapes                 = 0


def count_flops(cfg: ModelConfig) -> int:
    """Analytic FLOPs for one forward pass over one window."""
    hd, hid = cfg.flat_dim, cfg.head_hidden
    norm = 4 * cfg.L * cfg.D
    encoder = cfg.D * (2 * cfg.H * cfg.L + cfg.H)
    traj = 4 * hd * hid + 2 * hid + 2 * hd
    conf = 2 * hd * hid + 4 * hid + 2
    denorm = cfg.K * 2 * cfg.H * cfg.D
    return norm + encoder + cfg.K * (traj + conf) + denorm


def _tape_flops(tape: Tape) -> int:
    total = 0
    for node in tape.nodes:
        if node.op == "matmul":
            if node.payload.get("data_movement"):
                continue
            a = tape.nodes[node.inputs[0]].value
            b = tape.nodes[node.inputs[1]].value
            total += 2 * a.shape[0] * a.shape[1] * b.shape[1]
        elif node.op in ("add", "sub", "mul", "square", "relu", "sigmoid", "log", "scale"):
            total += node.value.size
        elif node.op in ("sum_all", "mean_all"):
            total += tape.nodes[node.inputs[0]].value.size
    return total


def count_flops_instrumented(cfg: ModelConfig) -> int:
    """FLOPs counted by walking a recorded forward pass of the network.

    The encoder and head arithmetic is counted from the actual shapes on
    the tape; normalization and de-normalization are added with the same
    documented convention as :func:`count_flops` (they run outside the
    tape).
    """
    tape = Tape()
    params = init_params(cfg)
    pnodes = param_leaves(tape, params)
    record_network(tape, pnodes, np.zeros((1, cfg.L, cfg.D)), cfg)
    return _tape_flops(tape) + 4 * cfg.L * cfg.D + cfg.K * 2 * cfg.H * cfg.D


def measure_latency(params: ModelParams, cfg: ModelConfig, batch: np.ndarray, repeats: int = 9) -> float:
    """Median wall-clock seconds of a full-batch forward pass.

    One warm-up pass runs first; timing brackets only the forward call.
    """
    if repeats < 3:
        raise ConfigError(f"repeats must be >= 3, got {repeats}")
    batch = np.asarray(batch, dtype=np.float64)
    forward_batch(batch, params, cfg)  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward_batch(batch, params, cfg)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


# --- aggregate evaluation ---


@dataclass
class EvalResult:
    """Original-scale accuracy metrics over a set of evaluation windows."""

    distortion: float
    crps_sum: float
    crps_sum_raw: float
    n_windows: int
    per_channel_distortion: np.ndarray  # (D,)
    per_channel_crps: np.ndarray  # (D,)
    utilization: np.ndarray  # (K,) winner counts over the windows

    def to_dict(self) -> dict:
        return {
            "distortion": self.distortion,
            "crps_sum": self.crps_sum,
            "crps_sum_raw": self.crps_sum_raw,
            "n_windows": self.n_windows,
            "per_channel_distortion": [float(v) for v in self.per_channel_distortion],
            "per_channel_crps": [float(v) for v in self.per_channel_crps],
            "utilization": [int(v) for v in self.utilization],
        }


def evaluate_windows(
    params: ModelParams,
    cfg: ModelConfig,
    x: np.ndarray,
    y: np.ndarray,
    *,
    confidence_weighted: bool = False,
) -> tuple[EvalResult, np.ndarray]:
    """Evaluate a model on stacked raw windows; returns result and latents."""
    hyps, confs, latents, mu, sigma = forward_batch(x, params, cfg)
    n, k = hyps.shape[0], hyps.shape[1]
    dist = distortion_stack(hyps, y)
    crps_n = _crps_sum_core(hyps, confs, y, True, confidence_weighted)
    crps_r = _crps_sum_core(hyps, confs, y, False, confidence_weighted)

    per_d = np.empty(cfg.D)
    per_d_crps = np.empty(cfg.D)
    for d in range(cfg.D):
        per_d[d] = distortion_stack(hyps[:, :, :, d : d + 1], y[:, :, d : d + 1])
        per_d_crps[d] = crps_sum(hyps[:, :, :, d : d + 1], y[:, :, d : d + 1], normalized=True)

    # Winner counts under the training criterion: normalized-space MSE.
    yn = (y - mu[:, None, :]) / sigma[:, None, :]
    hyps_n = (hyps - mu[:, None, None, :]) / sigma[:, None, None, :]
    losses = np.mean((hyps_n - yn[:, None]) ** 2, axis=(2, 3))
    winners = np.argmin(losses, axis=1)
    hist = np.bincount(winners, minlength=k)

    result = EvalResult(
        distortion=dist,
        crps_sum=crps_n,
        crps_sum_raw=crps_r,
        n_windows=n,
        per_channel_distortion=per_d,
        per_channel_crps=per_d_crps,
        utilization=hist,
    )
    return result, latents

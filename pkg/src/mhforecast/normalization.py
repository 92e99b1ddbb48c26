"""Reversible input pre-conditioning with per-window stored statistics.

The default kind ("sin") computes trimmed per-channel location/scale over
a context window: the ``k = floor(p*L)`` smallest and largest values of
each channel are discarded and the mean and population variance of the
central ``L - 2k`` values are used. Because the statistics are stored,
normalization is exactly invertible at any horizon length, and because
they are trimmed, they are invariant to the magnitude of the extreme
values they discard.

Ablation kinds replicate the usual batch/layer/group statistic pooling at
the same input position, returned in the same :class:`NormStats` carrier
so the normalize/denormalize path is uniform across kinds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

PER_WINDOW_KINDS = ("sin", "instance", "mean-scaler", "identity")
BATCH_KINDS = ("batch-stat", "layer-stat", "group-stat")
KINDS = PER_WINDOW_KINDS + BATCH_KINDS


@dataclass(frozen=True)
class NormConfig:
    """Normalization choice and its constants.

    ``var_epsilon`` is the stabilizer added under the square root of the
    scale; zero is allowed (exact statistics) but then constant channels
    produce a zero scale.
    """

    kind: str = "sin"
    trim_ratio: float = 0.1
    var_epsilon: float = 1e-5
    group_count: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown normalization kind {self.kind!r}; valid: {KINDS}")
        if not 0.0 <= self.trim_ratio < 0.5:
            raise ConfigError(f"trim_ratio must be in [0, 0.5), got {self.trim_ratio}")
        if self.var_epsilon < 0.0:
            raise ConfigError(f"var_epsilon must be >= 0, got {self.var_epsilon}")
        if self.group_count < 1:
            raise ConfigError(f"group_count must be >= 1, got {self.group_count}")


@dataclass(frozen=True)
class NormStats:
    """Per-channel location and scale captured from one window."""

    mu: np.ndarray  # (D,)
    sigma: np.ndarray  # (D,)


def batch_stats(x: np.ndarray, cfg: NormConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-window statistics for a stack of windows.

    Parameters
    ----------
    x : (B, L, D) array
    cfg : NormConfig

    Returns
    -------
    mu, sigma : (B, D) arrays
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected a (B, L, D) stack, got shape {x.shape}")
    b, length, d = x.shape
    eps = cfg.var_epsilon
    kind = cfg.kind

    if kind in ("sin", "instance"):
        k = int(np.floor(cfg.trim_ratio * length)) if kind == "sin" else 0
        if length - 2 * k < 1:
            raise ConfigError(
                f"trim ratio leaves no samples (L={length}, trim_ratio={cfg.trim_ratio})"
            )
        s = np.sort(x, axis=1, kind="stable")
        central = s[:, k : length - k, :]
        mu = central.mean(axis=1)
        v = np.mean((central - mu[:, None, :]) ** 2, axis=1)
        return mu, np.sqrt(v + eps)

    if kind == "mean-scaler":
        sigma = np.abs(x).mean(axis=1) + eps
        return np.zeros((b, d)), sigma

    if kind == "identity":
        return np.zeros((b, d)), np.ones((b, d))

    if kind == "batch-stat":
        # One statistic per channel, pooled over every instance and step.
        mu_c = x.mean(axis=(0, 1))
        v_c = np.mean((x - mu_c) ** 2, axis=(0, 1))
        sig_c = np.sqrt(v_c + eps)
        return np.tile(mu_c, (b, 1)), np.tile(sig_c, (b, 1))

    if kind == "layer-stat":
        mu_i = x.mean(axis=(1, 2))
        v_i = np.mean((x - mu_i[:, None, None]) ** 2, axis=(1, 2))
        sig_i = np.sqrt(v_i + eps)
        return np.tile(mu_i[:, None], (1, d)), np.tile(sig_i[:, None], (1, d))

    if kind == "group-stat":
        g = cfg.group_count
        if d % g != 0:
            raise ConfigError(f"group_count={g} does not divide D={d}")
        xg = x.reshape(b, length, g, d // g)
        mu_g = xg.mean(axis=(1, 3))  # (B, g)
        v_g = np.mean((xg - mu_g[:, None, :, None]) ** 2, axis=(1, 3))
        sig_g = np.sqrt(v_g + eps)
        rep = d // g
        return np.repeat(mu_g, rep, axis=1), np.repeat(sig_g, rep, axis=1)

    raise ConfigError(f"unknown normalization kind {kind!r}")  # pragma: no cover


def robust_stats(x: np.ndarray, cfg: NormConfig) -> NormStats:
    """Statistics of one context window for the per-window kinds."""
    if cfg.kind not in PER_WINDOW_KINDS:
        raise ConfigError(
            f"kind {cfg.kind!r} pools across a batch; use ablation_stats"
        )
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an (L, D) window, got shape {x.shape}")
    mu, sigma = batch_stats(x[None], cfg)
    return NormStats(mu[0], sigma[0])


def ablation_stats(batch: np.ndarray, cfg: NormConfig) -> list[NormStats]:
    """Per-instance statistics for the batch/layer/group ablation kinds."""
    if cfg.kind not in BATCH_KINDS:
        raise ConfigError(f"ablation_stats expects one of {BATCH_KINDS}, got {cfg.kind!r}")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[0] < 1:
        raise ShapeError(f"expected a non-empty (B, L, D) stack, got shape {batch.shape}")
    mu, sigma = batch_stats(batch, cfg)
    return [NormStats(mu[i], sigma[i]) for i in range(batch.shape[0])]


def window_stats(x: np.ndarray, cfg: NormConfig) -> NormStats:
    """Statistics for a single window under any kind.

    Batch-pooling kinds degenerate to a batch of one here; this keeps
    single-window forecasting available for every configuration.
    """
    if cfg.kind in PER_WINDOW_KINDS:
        return robust_stats(x, cfg)
    return ablation_stats(np.asarray(x, dtype=np.float64)[None], cfg)[0]


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Channel-wise affine map ``(x - mu) / sigma`` on the unsorted values."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != stats.mu.shape[0]:
        raise ShapeError(f"window shape {x.shape} does not match D={stats.mu.shape[0]}")
    return (x - stats.mu) / stats.sigma


def denormalize(y: np.ndarray, stats: NormStats) -> np.ndarray:
    """Exact inverse of :func:`normalize`; valid at any horizon length."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != stats.mu.shape[0]:
        raise ShapeError(f"window shape {y.shape} does not match D={stats.mu.shape[0]}")
    return y * stats.sigma + stats.mu


def normalize_batch(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return (x - mu[:, None, :]) / sigma[:, None, :]


def denormalize_batch(y: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return y * sigma[:, None, :] + mu[:, None, :]

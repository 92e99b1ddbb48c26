"""The forecasting network.

Pipeline: pre-normalize the raw context window, project each channel's
history to the horizon with its own linear map (channels never mix), then
feed the shared latent to K parallel heads. Each head owns a trajectory
MLP (a residual perturbation of the latent, so every head starts on the
scale the normalizer established) and a confidence MLP whose sigmoid
output estimates the probability that this head is the best one.

Losses are computed in normalized space; forecasts are reported in the
original data scale via the stored statistics.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, stable_sigmoid
from .errors import ConfigError, NumericError, ShapeError
from .normalization import (
    NormConfig,
    NormStats,
    batch_stats,
    denormalize,
    denormalize_batch,
    normalize,
    normalize_batch,
    window_stats,
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``init_scale`` multiplies the output-layer weights of both head MLPs;
    at zero, every trajectory head reproduces the latent exactly and every
    confidence head outputs sigmoid(0).
    """

    L: int
    H: int
    D: int
    K: int
    head_hidden: int = 64
    norm: NormConfig = field(default_factory=NormConfig)
    init_seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        for name in ("L", "H", "D", "K", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.init_scale < 0:
            raise ConfigError(f"init_scale must be >= 0, got {self.init_scale}")

    @property
    def flat_dim(self) -> int:
        return self.H * self.D


@dataclass
class HeadParams:
    """One two-layer MLP: in -> hidden (ReLU) -> out."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ModelParams:
    """All learnable weights, iterated in a fixed documented order."""

    encoder_w: list  # D arrays of shape (H, L)
    encoder_b: list  # D arrays of shape (1, H)
    traj: list  # K HeadParams, flat_dim -> hidden -> flat_dim
    conf: list  # K HeadParams, flat_dim -> hidden -> 1

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield (name, array) pairs: encoder channels, then heads in order."""
        for d, (w, b) in enumerate(zip(self.encoder_w, self.encoder_b)):
            yield f"encoder_w_{d}", w
            yield f"encoder_b_{d}", b
        for k, head in enumerate(self.traj):
            for part in ("w1", "b1", "w2", "b2"):
                yield f"traj_{k}_{part}", getattr(head, part)
        for k, head in enumerate(self.conf):
            for part in ("w1", "b1", "w2", "b2"):
                yield f"conf_{k}_{part}", getattr(head, part)

    def copy(self) -> "ModelParams":
        return ModelParams(
            encoder_w=[w.copy() for w in self.encoder_w],
            encoder_b=[b.copy() for b in self.encoder_b],
            traj=[HeadParams(h.w1.copy(), h.b1.copy(), h.w2.copy(), h.b2.copy()) for h in self.traj],
            conf=[HeadParams(h.w1.copy(), h.b1.copy(), h.w2.copy(), h.b2.copy()) for h in self.conf],
        )

    def count(self) -> int:
        return sum(a.size for _, a in self.named_arrays())


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count as a function of (L, H, D, K, hidden)."""
    hd, hid = cfg.flat_dim, cfg.head_hidden
    encoder = cfg.D * (cfg.H * cfg.L + cfg.H)
    traj = hd * hid + hid + hid * hd + hd
    conf = hd * hid + hid + hid * 1 + 1
    return encoder + cfg.K * (traj + conf)


@dataclass
class ForecastSet:
    """K de-normalized hypothesis trajectories for one context window."""

    hypotheses: list  # K arrays of shape (H, D), original scale
    confidences: np.ndarray  # (K,), each in [0, 1]
    latent: np.ndarray  # (H, D), normalized scale
    stats: NormStats


def init_params(cfg: ModelConfig) -> ModelParams:
    """Seeded initialization.

    Draw order is fixed: encoder weights per channel, then per head the
    trajectory MLP followed by the confidence MLP. Biases start at zero;
    output-layer weights are multiplied by ``init_scale``.
    """
    rng = np.random.default_rng(cfg.init_seed)
    hd, hid = cfg.flat_dim, cfg.head_hidden
    enc_bound = 1.0 / np.sqrt(cfg.L)
    in_bound = 1.0 / np.sqrt(hd)
    out_bound = 1.0 / np.sqrt(hid)

    encoder_w = [rng.uniform(-enc_bound, enc_bound, (cfg.H, cfg.L)) for _ in range(cfg.D)]
    encoder_b = [np.zeros((1, cfg.H)) for _ in range(cfg.D)]
    traj, conf = [], []
    for _ in range(cfg.K):
        traj.append(
            HeadParams(
                w1=rng.uniform(-in_bound, in_bound, (hd, hid)),
                b1=np.zeros((1, hid)),
                w2=cfg.init_scale * rng.uniform(-out_bound, out_bound, (hid, hd)),
                b2=np.zeros((1, hd)),
            )
        )
        conf.append(
            HeadParams(
                w1=rng.uniform(-in_bound, in_bound, (hd, hid)),
                b1=np.zeros((1, hid)),
                w2=cfg.init_scale * rng.uniform(-out_bound, out_bound, (hid, 1)),
                b2=np.zeros((1, 1)),
            )
        )
    return ModelParams(encoder_w, encoder_b, traj, conf)


def encode(x_norm: np.ndarray, params: ModelParams) -> np.ndarray:
    """Per-channel linear projection of the context to the horizon."""
    x_norm = np.asarray(x_norm, dtype=np.float64)
    d = len(params.encoder_w)
    if x_norm.ndim != 2 or x_norm.shape[1] != d:
        raise ShapeError(f"encode: window shape {x_norm.shape} does not match D={d}")
    if x_norm.shape[0] != params.encoder_w[0].shape[1]:
        raise ShapeError(
            f"encode: window length {x_norm.shape[0]} does not match "
            f"L={params.encoder_w[0].shape[1]}"
        )
    h = params.encoder_w[0].shape[0]
    z = np.empty((h, d))
    for j in range(d):
        z[:, j] = params.encoder_w[j] @ x_norm[:, j] + params.encoder_b[j][0]
    return z


def _head_forward(vec: np.ndarray, head: HeadParams) -> np.ndarray:
    hidden = np.maximum(vec @ head.w1 + head.b1, 0.0)
    return hidden @ head.w2 + head.b2


def decode(z: np.ndarray, params: ModelParams) -> tuple[list, np.ndarray]:
    """K trajectory hypotheses (normalized scale) and K confidences."""
    h, d = z.shape
    vec = z.reshape(1, h * d)  # row-major: time index outer, channel inner
    hyps = []
    confs = np.empty(len(params.traj))
    for k, head in enumerate(params.traj):
        hyps.append(z + _head_forward(vec, head).reshape(h, d))
    for k, head in enumerate(params.conf):
        confs[k] = stable_sigmoid(_head_forward(vec, head))[0, 0]
    return hyps, confs


def forward(x_raw: np.ndarray, params: ModelParams, cfg: ModelConfig) -> ForecastSet:
    """Full single-window pass: stats, normalize, encode, decode, invert."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if x_raw.shape != (cfg.L, cfg.D):
        raise ShapeError(f"forward: expected ({cfg.L}, {cfg.D}) window, got {x_raw.shape}")
    stats = window_stats(x_raw, cfg.norm)
    z = encode(normalize(x_raw, stats), params)
    hyps_norm, confs = decode(z, params)
    hyps = [denormalize(y, stats) for y in hyps_norm]
    for k, y in enumerate(hyps):
        if not np.all(np.isfinite(y)):
            raise NumericError(f"hypothesis {k} contains non-finite values")
    return ForecastSet(hypotheses=hyps, confidences=confs, latent=z, stats=stats)


def forward_batch(
    x: np.ndarray, params: ModelParams, cfg: ModelConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized inference over a stack of windows.

    Parameters
    ----------
    x : (B, L, D) raw-scale windows

    Returns
    -------
    hyps : (B, K, H, D) original scale
    confs : (B, K)
    latents : (B, H, D) normalized scale
    mu, sigma : (B, D) statistics used
    """
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    if x.shape[1:] != (cfg.L, cfg.D):
        raise ShapeError(f"expected (B, {cfg.L}, {cfg.D}) windows, got {x.shape}")
    mu, sigma = batch_stats(x, cfg.norm)
    xn = normalize_batch(x, mu, sigma)
    z = np.empty((b, cfg.H, cfg.D))
    for d in range(cfg.D):
        z[:, :, d] = xn[:, :, d] @ params.encoder_w[d].T + params.encoder_b[d]
    vec = z.reshape(b, cfg.flat_dim)
    hyps = np.empty((b, cfg.K, cfg.H, cfg.D))
    confs = np.empty((b, cfg.K))
    for k in range(cfg.K):
        yk = (vec + _head_forward(vec, params.traj[k])).reshape(b, cfg.H, cfg.D)
        hyps[:, k] = denormalize_batch(yk, mu, sigma)
        confs[:, k] = stable_sigmoid(_head_forward(vec, params.conf[k]))[:, 0]
    if not np.all(np.isfinite(hyps)):
        raise NumericError("batch forward produced non-finite hypotheses")
    return hyps, confs, z, mu, sigma


# --- tape form of the network (used by training and FLOP instrumentation) ---


def vec_permutation(h: int, d: int) -> np.ndarray:
    """Column permutation mapping [channel-major] to row-major vec order."""
    hd = h * d
    p = np.zeros((hd, hd))
    for j in range(d):
        for t in range(h):
            p[j * h + t, t * d + j] = 1.0
    return p


def param_leaves(tape: Tape, params: ModelParams) -> dict:
    """Record every parameter as a leaf; encoder weights enter transposed.

    The tape works in row convention (windows are rows), so the encoder
    maps appear as (L, H) leaves. :func:`grads_by_name` transposes the
    corresponding gradients back to parameter orientation.
    """
    nodes = {}
    for name, arr in params.named_arrays():
        nodes[name] = tape.leaf(arr.T if name.startswith("encoder_w_") else arr)
    return nodes


def grads_by_name(grad_map: dict, leaves: dict, params: ModelParams) -> dict:
    out = {}
    for name, _ in params.named_arrays():
        g = grad_map[leaves[name]]
        out[name] = g.T if name.startswith("encoder_w_") else g
    return out


def record_network(
    tape: Tape, pnodes: dict, x_norm: np.ndarray, cfg: ModelConfig
) -> tuple[int, list, list]:
    """Record encode+decode for a stack of normalized windows.

    Returns the node ids of the flattened latent (B, H*D), the K trajectory
    hypotheses in flattened normalized form, and the K confidence columns.
    """
    b = x_norm.shape[0]
    cols = []
    for d in range(cfg.D):
        xd = tape.leaf(np.ascontiguousarray(x_norm[:, :, d]))
        zd = dc.add(tape, dc.matmul(tape, xd, pnodes[f"encoder_w_{d}"]), pnodes[f"encoder_b_{d}"])
        cols.append(zd)
    if cfg.D == 1:
        vec = cols[0]
    else:
        chan_major = dc.concat_cols(tape, *cols)
        perm = tape.leaf(vec_permutation(cfg.H, cfg.D))
        vec = dc.matmul(tape, chan_major, perm, data_movement=True)
    traj_vecs, conf_cols = [], []
    for k in range(cfg.K):
        hid = dc.relu(
            tape, dc.add(tape, dc.matmul(tape, vec, pnodes[f"traj_{k}_w1"]), pnodes[f"traj_{k}_b1"])
        )
        out = dc.add(tape, dc.matmul(tape, hid, pnodes[f"traj_{k}_w2"]), pnodes[f"traj_{k}_b2"])
        traj_vecs.append(dc.add(tape, out, vec))
        hc = dc.relu(
            tape, dc.add(tape, dc.matmul(tape, vec, pnodes[f"conf_{k}_w1"]), pnodes[f"conf_{k}_b1"])
        )
        conf_cols.append(
            dc.sigmoid(tape, dc.add(tape, dc.matmul(tape, hc, pnodes[f"conf_{k}_w2"]), pnodes[f"conf_{k}_b2"]))
        )
    return vec, traj_vecs, conf_cols


# --- checkpoint io ---


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig) -> None:
    """Write a flat key->matrix map with a JSON config header; bit-exact."""
    header = {
        "L": cfg.L,
        "H": cfg.H,
        "D": cfg.D,
        "K": cfg.K,
        "head_hidden": cfg.head_hidden,
        "init_seed": cfg.init_seed,
        "init_scale": cfg.init_scale,
        "norm_kind": cfg.norm.kind,
        "trim_ratio": cfg.norm.trim_ratio,
        "var_epsilon": cfg.norm.var_epsilon,
        "group_count": cfg.norm.group_count,
    }
    arrays = dict(params.named_arrays())
    np.savez(path, __config__=json.dumps(header, sort_keys=True), **arrays)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__config__"]))
        arrays = {k: np.asarray(z[k], dtype=np.float64) for k in z.files if k != "__config__"}
    cfg = ModelConfig(
        L=header["L"],
        H=header["H"],
        D=header["D"],
        K=header["K"],
        head_hidden=header["head_hidden"],
        init_seed=header["init_seed"],
        init_scale=header["init_scale"],
        norm=NormConfig(
            kind=header["norm_kind"],
            trim_ratio=header["trim_ratio"],
            var_epsilon=header["var_epsilon"],
            group_count=header["group_count"],
        ),
    )
    params = init_params(cfg)
    for name, arr in params.named_arrays():
        if name not in arrays:
            raise ConfigError(f"checkpoint is missing array {name!r}")
        if arrays[name].shape != arr.shape:
            raise ShapeError(
                f"checkpoint array {name!r} has shape {arrays[name].shape}, expected {arr.shape}"
            )
        arr[...] = arrays[name]
    return params, cfg

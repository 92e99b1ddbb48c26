"""Dataset ingestion, windowing, and synthetic generators.

Datasets are plain (T, D) matrices with chronological train/val/test
boundaries (70/10/20 by default). Window pairs are contiguous slices:
the target starts exactly where the context ends. The synthetic
generators are diagnostic instruments: one with genuinely two-branched
continuations, one with channels on wildly different scales, one with a
clean seasonal base plus spikes.
"""

from __future__ import annotations

import ast
import csv
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .errors import ConfigError, DataError, ParseError, ShapeError

SPLITS = ("train", "val", "test", "all")


def default_split(t: int) -> tuple[int, int]:
    """Chronological 70/10/20 boundaries; needs at least two rows."""
    if t < 2:
        raise DataError(f"dataset needs at least 2 rows, got {t}")
    train_end = max(1, int(0.7 * t))
    val_end = min(t, max(train_end + 1, int(0.8 * t)))
    return train_end, val_end


@dataclass
class TimeSeriesDataset:
    """A (T, D) value matrix with chronological split boundaries."""

    values: np.ndarray
    train_end: int
    val_end: int
    freq_label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"values must be (T, D), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("dataset contains non-finite values")
        t = self.values.shape[0]
        if not 0 < self.train_end < self.val_end <= t:
            raise DataError(
                f"split boundaries must satisfy 0 < train_end < val_end <= T, "
                f"got train_end={self.train_end}, val_end={self.val_end}, T={t}"
            )

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]

    def split_range(self, split: str) -> tuple[int, int]:
        if split == "train":
            return 0, self.train_end
        if split == "val":
            return self.train_end, self.val_end
        if split == "test":
            return self.val_end, self.T
        if split == "all":
            return 0, self.T
        raise ConfigError(f"unknown split {split!r}; valid: {SPLITS}")


@dataclass(frozen=True)
class WindowPair:
    """Contiguous context/target pair; y starts where x ends."""

    x: np.ndarray  # (L, D)
    y: np.ndarray  # (H, D)
    origin: int


def read_matrix_csv(path, has_header: bool = False) -> np.ndarray:
    """Parse a rectangular numeric CSV into a (T, D) matrix.

    Error messages carry physical row numbers (1-based, header included).
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not record:
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise ParseError(
                    f"ragged row {lineno}: expected {width} columns, got {len(record)}"
                )
            parsed = []
            for col, cell in enumerate(record, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"non-numeric value {cell.strip()!r} at row {lineno}, column {col}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ParseError(f"no data rows in {path}")
    return np.asarray(rows, dtype=np.float64)


def load_csv(
    path,
    has_header: bool = False,
    *,
    train_end: int | None = None,
    val_end: int | None = None,
    freq_label: str = "",
) -> TimeSeriesDataset:
    """Load a CSV (rows = time, columns = channels) with default splits."""
    values = read_matrix_csv(path, has_header)
    if train_end is None or val_end is None:
        d_train, d_val = default_split(values.shape[0])
        train_end = d_train if train_end is None else train_end
        val_end = d_val if val_end is None else val_end
    return TimeSeriesDataset(values, train_end, val_end, freq_label=freq_label)


def save_csv(values: np.ndarray, path) -> None:
    """Write a matrix with full round-trip precision (shortest repr)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"values must be (T, D), got shape {values.shape}")
    with open(path, "w", newline="\n") as fh:
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def window_at(values: np.ndarray, origin: int, length: int, horizon: int) -> WindowPair:
    x = values[origin : origin + length]
    y = values[origin + length : origin + length + horizon]
    return WindowPair(x=x, y=y, origin=origin)


def eval_origins(start: int, end: int, length: int, horizon: int) -> list:
    """Non-overlapping tiles of the segment, starting at its first row."""
    step = length + horizon
    return [o for o in range(start, end - step + 1, step)]


def windows(ds: TimeSeriesDataset, length: int, horizon: int, split: str = "test", *,
            mode: str = "eval", seed: int | None = None, count: int | None = None):
    """Stream WindowPairs from a split.

    ``eval`` mode tiles the split with non-overlapping consecutive
    windows; ``train`` mode draws uniformly random origins with
    replacement (seeded), yielding ``count`` pairs (or endlessly when
    ``count`` is None).
    """
    start, end = ds.split_range(split)
    window = length + horizon
    if end - start < window:
        raise DataError(
            f"split {split!r} has {end - start} rows; needs at least {window}"
        )
    if mode == "eval":
        for o in eval_origins(start, end, length, horizon):
            yield window_at(ds.values, o, length, horizon)
        return
    if mode != "train":
        raise ConfigError(f"unknown mode {mode!r}; valid: train, eval")
    rng = np.random.default_rng(seed)
    produced = 0
    while count is None or produced < count:
        o = start + int(rng.integers(0, end - start - window + 1))
        yield window_at(ds.values, o, length, horizon)
        produced += 1


def eval_windows_arrays(
    ds: TimeSeriesDataset, length: int, horizon: int, split: str
) -> tuple[np.ndarray, np.ndarray, list]:
    """Stacked eval-mode windows: (N, L, D) contexts, (N, H, D) targets."""
    pairs = list(windows(ds, length, horizon, split, mode="eval"))
    x = np.stack([p.x for p in pairs])
    y = np.stack([p.y for p in pairs])
    return x, y, [p.origin for p in pairs]


# --- synthetic generators ---


def synth_bimodal(
    t: int,
    seed: int,
    *,
    segment_len: int = 32,
    amplitude: float = 1.0,
    noise_ratio: float = 0.05,
) -> TimeSeriesDataset:
    """Ramp contexts followed by a half-sine continuation of random sign.

    Each segment of ``segment_len`` rows is a fixed ramp over the first
    half and ``sign * amplitude * sin(pi * i / half)`` plus Gaussian noise
    (sd = noise_ratio * amplitude) over the second half, with the sign a
    fair coin per segment. Split boundaries are aligned to segment starts
    so eval tiles see the ramp as context and the signed arc as target.
    """
    if t < 200:
        raise ConfigError(f"bimodal generator needs T >= 200, got {t}")
    if segment_len < 4 or segment_len % 2 != 0:
        raise ConfigError(f"segment_len must be an even number >= 4, got {segment_len}")
    rng = np.random.default_rng(seed)
    half = segment_len // 2
    ramp = np.linspace(-amplitude, amplitude, half)
    arc = amplitude * np.sin(np.pi * np.arange(half) / half)
    noise_sd = noise_ratio * amplitude
    pieces = []
    for _ in range(ceil(t / segment_len)):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        cont = sign * arc + rng.normal(0.0, noise_sd, half)
        pieces.append(np.concatenate([ramp, cont]))
    values = np.concatenate(pieces)[:t].reshape(-1, 1)
    train_end = (int(0.7 * t) // segment_len) * segment_len
    val_end = (int(0.8 * t) // segment_len) * segment_len
    if train_end < segment_len or val_end <= train_end or val_end >= t:
        raise DataError(f"T={t} too small for segment-aligned splits")
    meta = {
        "generator": "bimodal",
        "seed": seed,
        "segment_len": segment_len,
        "amplitude": amplitude,
        "noise_sd": noise_sd,
        "T": t,
        "D": 1,
    }
    return TimeSeriesDataset(values, train_end, val_end, freq_label="synthetic", meta=meta)


def synth_scale_imbalance(
    t: int, scales, seed: int, *, ar_coeff: float = 0.9
) -> TimeSeriesDataset:
    """Independent AR(1) channels multiplied by per-channel scales."""
    scales = np.asarray(scales, dtype=np.float64)
    if scales.ndim != 1 or scales.size < 1:
        raise ConfigError("scales must be a non-empty 1-D sequence")
    if np.any(scales <= 0):
        raise ConfigError(f"scales must be positive, got {scales.tolist()}")
    rng = np.random.default_rng(seed)
    d = scales.size
    innov = rng.standard_normal((t, d))
    x = np.empty((t, d))
    x[0] = innov[0] / np.sqrt(1.0 - ar_coeff**2)  # stationary start
    for i in range(1, t):
        x[i] = ar_coeff * x[i - 1] + innov[i]
    values = x * scales
    train_end, val_end = default_split(t)
    meta = {
        "generator": "scale-imbalance",
        "seed": seed,
        "scales": scales.tolist(),
        "ar_coeff": ar_coeff,
        "T": t,
        "D": d,
    }
    return TimeSeriesDataset(values, train_end, val_end, freq_label="synthetic", meta=meta)


def synth_spiky(
    t: int, spike_prob: float, spike_mag: float, seed: int, *, period: int = 24
) -> TimeSeriesDataset:
    """Smooth seasonal base with Bernoulli spikes added on top."""
    if not 0.0 <= spike_prob <= 0.2:
        raise ConfigError(f"spike_prob must be in [0, 0.2], got {spike_prob}")
    rng = np.random.default_rng(seed)
    base = np.sin(2.0 * np.pi * np.arange(t) / period)
    spikes = rng.random(t) < spike_prob
    values = (base + spikes * spike_mag).reshape(-1, 1)
    train_end, val_end = default_split(t)
    meta = {
        "generator": "spiky",
        "seed": seed,
        "spike_prob": spike_prob,
        "spike_mag": spike_mag,
        "period": period,
        "n_spikes": int(spikes.sum()),
        "T": t,
        "D": 1,
    }
    return TimeSeriesDataset(values, train_end, val_end, freq_label="synthetic", meta=meta)


def write_metadata(path, meta: dict) -> None:
    """Sidecar of key=value lines, sorted by key."""
    with open(path, "w", newline="\n") as fh:
        for key in sorted(meta):
            fh.write(f"{key}={meta[key]!r}\n")


def read_metadata(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            try:
                out[key] = ast.literal_eval(raw)
            except (ValueError, SyntaxError):
                out[key] = raw
    return out

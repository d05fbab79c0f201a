"""Resampling, windowing and window features for IMU streams.

Pipeline: 100 Hz accel/gyro -> linear resample onto a shared 20 Hz grid ->
non-overlapping 2 s windows (40 samples) -> 18 features per window.

Feature layout, per sensor in (accel, gyro)::

    mean_x mean_y mean_z std_x std_y std_z sma spectral_entropy dominant_freq_hz

SMA is ``mean(|x| + |y| + |z|)``.  Spectral features use the mean-removed
magnitude signal: the power in FFT bins 1..19 (0.5 Hz spacing, DC and
Nyquist excluded) normalised to a distribution ``p``; entropy is
``-sum(p ln p) / ln(19)`` and the dominant frequency is the centre of the
strongest bin (the lowest one among bins within 1e-9 of the maximum).  Both are 0 for a signal with no AC power.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sensorlog import SensorLog, Stream, atomic_write_text

TARGET_HZ = 20
STEP_MS = 1000 // TARGET_HZ
WINDOW_SAMPLES = 40
WINDOW_MS = WINDOW_SAMPLES * STEP_MS
N_BINS = WINDOW_SAMPLES // 2 - 1  # bins 1..19
BIN_HZ = TARGET_HZ / WINDOW_SAMPLES
_ZERO_POWER_RTOL = 1e-24
_PEAK_RTOL = 1e-9

_PER_SENSOR = (
    "mean_x", "mean_y", "mean_z", "std_x", "std_y", "std_z",
    "sma", "spectral_entropy", "dominant_freq_hz",
)
FEATURE_NAMES = tuple(f"{s}_{f}" for s in ("accel", "gyro") for f in _PER_SENSOR)
N_FEATURES = len(FEATURE_NAMES)


class SignalError(ValueError):
    pass


@dataclass(eq=False)
class FeatureWindow:
    start_t: int
    features: np.ndarray
    label: str | None = None
    duration: int = WINDOW_MS


@dataclass(eq=False)
class UniformSeries:
    """Samples on a regular grid; ``values`` has shape (n, channels)."""

    t0: int
    step_ms: int
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.step_ms * np.arange(len(self), dtype=np.int64)


def resample(
    t: np.ndarray,
    values: np.ndarray,
    target_hz: int = TARGET_HZ,
    start: int | None = None,
    end: int | None = None,
) -> UniformSeries:
    """Linearly interpolate onto a uniform grid, never extrapolating.

    The grid runs from ``start`` (default: first timestamp) in steps of
    ``1000 / target_hz`` ms up to ``end`` (default: last timestamp).
    """
    t = np.asarray(t, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if t.shape[0] < 2:
        raise SignalError(f"need at least 2 samples to resample, got {t.shape[0]}")
    if 1000 % target_hz:
        raise SignalError(f"target rate {target_hz} Hz does not give an integer ms step")
    step = 1000 // target_hz
    lo = int(t[0]) if start is None else int(start)
    hi = int(t[-1]) if end is None else int(end)
    if lo < t[0] or hi > t[-1] or hi < lo:
        raise SignalError(f"grid [{lo}, {hi}] outside sample span [{int(t[0])}, {int(t[-1])}]")
    n = (hi - lo) // step + 1
    # interpolate in offsets from the grid origin so large epoch values stay exact
    rel = (t - lo).astype(np.float64)
    grid = (step * np.arange(n, dtype=np.int64)).astype(np.float64)
    out = np.empty((n, values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.interp(grid, rel, values[:, c])
    return UniformSeries(lo, step, out)


def window(series: UniformSeries, size: int = WINDOW_SAMPLES) -> list[tuple[int, np.ndarray]]:
    """Split into consecutive non-overlapping windows; drop the partial tail."""
    n = len(series)
    if n < size:
        raise SignalError(f"series of {n} samples is shorter than one {size}-sample window")
    k = n // size
    vals = series.values[: k * size].reshape(k, size, -1)
    return [(series.t0 + i * size * series.step_ms, vals[i]) for i in range(k)]


def _sensor_features(w: np.ndarray) -> np.ndarray:
    """Features for a batch of windows shaped (k, 40, 3) -> (k, 9)."""
    k, n, _ = w.shape
    means = w.mean(axis=1)
    stds = w.std(axis=1)
    sma = np.abs(w).sum(axis=2).mean(axis=1)
    mag = np.sqrt((w * w).sum(axis=2))
    ac = mag - mag.mean(axis=1, keepdims=True)
    psd = np.abs(np.fft.rfft(ac, axis=1)) ** 2
    power = psd[:, 1 : N_BINS + 1]
    total = power.sum(axis=1)
    energy = (mag * mag).sum(axis=1)
    silent = total <= _ZERO_POWER_RTOL * energy * n
    safe_total = np.where(silent, 1.0, total)
    p = power / safe_total[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    entropy = -plogp.sum(axis=1) / math.log(N_BINS)
    entropy = np.clip(entropy, 0.0, 1.0)
    # near-equal peaks (flat spectra) resolve to the lowest frequency, independent of rounding
    near_max = power >= (1.0 - _PEAK_RTOL) * power.max(axis=1, keepdims=True)
    dom = (np.argmax(near_max, axis=1) + 1) * BIN_HZ
    entropy = np.where(silent, 0.0, entropy)
    dom = np.where(silent, 0.0, dom)
    return np.column_stack([means, stds, sma, entropy, dom])


def feature_matrix(accel_windows: np.ndarray, gyro_windows: np.ndarray) -> np.ndarray:
    """(k, 40, 3) accel and gyro window batches -> (k, 18) features."""
    accel_windows = np.asarray(accel_windows, dtype=np.float64)
    gyro_windows = np.asarray(gyro_windows, dtype=np.float64)
    for name, w in (("accel", accel_windows), ("gyro", gyro_windows)):
        if w.ndim != 3 or w.shape[1] != WINDOW_SAMPLES or w.shape[2] != 3:
            raise SignalError(f"{name} windows must have shape (k, {WINDOW_SAMPLES}, 3), got {w.shape}")
    if accel_windows.shape[0] != gyro_windows.shape[0]:
        raise SignalError("accel and gyro window counts differ")
    return np.hstack([_sensor_features(accel_windows), _sensor_features(gyro_windows)])


def extract_features(
    accel_win: np.ndarray, gyro_win: np.ndarray, start_t: int = 0, label: str | None = None
) -> FeatureWindow:
    accel_win = np.asarray(accel_win, dtype=np.float64)
    gyro_win = np.asarray(gyro_win, dtype=np.float64)
    if accel_win.shape != (WINDOW_SAMPLES, 3) or gyro_win.shape != (WINDOW_SAMPLES, 3):
        raise SignalError(
            f"windows must be ({WINDOW_SAMPLES}, 3); got {accel_win.shape} and {gyro_win.shape}"
        )
    feats = feature_matrix(accel_win[None], gyro_win[None])[0]
    return FeatureWindow(int(start_t), feats, label)


def window_label(label_t: np.ndarray, labels: np.ndarray, start: int, end: int) -> str | None:
    """Majority label of annotations in ``[start, end)``; ties go to moving."""
    lo, hi = np.searchsorted(label_t, [start, end], side="left")
    if hi <= lo:
        return None
    chunk = labels[lo:hi]
    n_pause = int(np.count_nonzero(chunk == "pausing"))
    return "pausing" if 2 * n_pause > len(chunk) else "moving"


def imu_windows(accel: Stream, gyro: Stream, labels: Stream | None = None) -> list[FeatureWindow]:
    """Run resample -> window -> features over a trip's accel and gyro."""
    if len(accel) < 2 or len(gyro) < 2:
        raise SignalError("accel and gyro need at least 2 samples each")
    start = max(int(accel.t[0]), int(gyro.t[0]))
    end = min(int(accel.t[-1]), int(gyro.t[-1]))
    if end - start < (WINDOW_SAMPLES - 1) * STEP_MS:
        raise SignalError("IMU streams do not overlap for one full window")
    a = resample(accel.t, accel.xyz(), TARGET_HZ, start, end)
    g = resample(gyro.t, gyro.xyz(), TARGET_HZ, start, end)
    k = len(a) // WINDOW_SAMPLES
    aw = a.values[: k * WINDOW_SAMPLES].reshape(k, WINDOW_SAMPLES, 3)
    gw = g.values[: k * WINDOW_SAMPLES].reshape(k, WINDOW_SAMPLES, 3)
    feats = feature_matrix(aw, gw)
    starts = start + WINDOW_MS * np.arange(k, dtype=np.int64)
    out = []
    for i in range(k):
        lab = None
        if labels is not None and len(labels):
            lab = window_label(labels.t, labels.columns["label"], int(starts[i]), int(starts[i]) + WINDOW_MS)
        out.append(FeatureWindow(int(starts[i]), feats[i], lab))
    return out


def log_windows(log: SensorLog) -> list[FeatureWindow]:
    return imu_windows(log["accel"], log["gyro"], log.labels)


def windows_to_csv(windows: Sequence[FeatureWindow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["start_t_ms", *FEATURE_NAMES, "label"])
    for fw in windows:
        w.writerow([fw.start_t, *(repr(float(v)) for v in fw.features), fw.label or ""])
    return buf.getvalue()


def write_windows_csv(windows: Sequence[FeatureWindow], path) -> None:
    atomic_write_text(path, windows_to_csv(windows))


def read_windows_csv(path) -> list[FeatureWindow]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "start_t_ms" or tuple(header[1 : 1 + N_FEATURES]) != FEATURE_NAMES:
            raise SignalError(f"{path}: unexpected feature CSV header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                feats = np.array([float(v) for v in row[1 : 1 + N_FEATURES]])
                label = row[1 + N_FEATURES] if len(row) > 1 + N_FEATURES and row[1 + N_FEATURES] else None
                out.append(FeatureWindow(int(row[0]), feats, label))
            except (ValueError, IndexError) as exc:
                raise SignalError(f"{path}:{lineno}: malformed row: {exc}") from None
    return out

"""Bandpass filtering and per-channel standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .dataset import ELECTRODES, N_ELECTRODES, Recording

STATS_SCOPES = ("train_only", "global", "per_recording")


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    low_cut_hz: float = 0.5
    high_cut_hz: float = 60.0
    order: int = 4

    def validate(self, sample_rate_hz: float) -> None:
        nyquist = sample_rate_hz / 2
        if self.order < 1:
            raise PreprocessError(f"filter.order: must be >= 1, got {self.order}")
        if not 0 < self.low_cut_hz < self.high_cut_hz:
            raise PreprocessError("filter: need 0 < low_cut_hz < high_cut_hz")
        if self.high_cut_hz >= nyquist:
            raise PreprocessError(
                f"filter.high_cut_hz: {self.high_cut_hz} Hz is not below Nyquist ({nyquist} Hz)")

    def design(self, sample_rate_hz: float) -> np.ndarray:
        """Second-order sections of the Butterworth bandpass."""
        self.validate(sample_rate_hz)
        return sps.butter(self.order, [self.low_cut_hz, self.high_cut_hz], btype="bandpass",
                          fs=sample_rate_hz, output="sos")


def filtfilt_padlen(sos: np.ndarray) -> int:
    # same default scipy uses: 3 * filter state length
    n_state = 2 * len(sos) + 1 - min((sos[:, 2] == 0).sum(), (sos[:, 5] == 0).sum())
    return 3 * int(n_state)


def bandpass_array(x: np.ndarray, sample_rate_hz: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Zero-phase (forward-backward) bandpass along the last axis."""
    sos = spec.design(sample_rate_hz)
    padlen = filtfilt_padlen(sos)
    if x.shape[-1] <= padlen:
        raise PreprocessError(
            f"series of {x.shape[-1]} samples is too short for filtfilt padding ({padlen})")
    return sps.sosfiltfilt(sos, x, axis=-1, padtype="odd", padlen=padlen)


def bandpass(rec: Recording, spec: FilterSpec = FilterSpec()) -> Recording:
    return rec.replace_data(bandpass_array(rec.data, rec.sample_rate_hz, spec))


def decimate(rec: Recording, factor: int) -> Recording:
    """Downsample by an integer factor with a zero-phase anti-alias FIR.

    Annotations are subsampled (they are piecewise constant in practice).
    """
    if factor == 1:
        return rec
    if factor < 1:
        raise PreprocessError("decimate: factor must be >= 1")
    data = sps.decimate(rec.data, factor, ftype="fir", axis=-1, zero_phase=True)
    return rec.replace_data(
        data, sample_rate_hz=rec.sample_rate_hz / factor,
        arousal=rec.arousal[::factor], valence=rec.valence[::factor],
    )


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (N_ELECTRODES,) or std.shape != (N_ELECTRODES,):
            raise PreprocessError("stats must cover all 12 electrodes")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {e: {"mean": float(m), "std": float(s)}
                for e, m, s in zip(ELECTRODES, self.mean, self.std)}


def stats_from_arrays(arrays) -> ChannelStats:
    """Pooled per-row mean and population std over arrays shaped (12, n_i)."""
    arrays = list(arrays)
    if not arrays:
        raise PreprocessError("compute_stats: no data")
    total = sum(a.shape[-1] for a in arrays)
    mean = sum(a.sum(axis=-1) for a in arrays) / total
    var = sum(((a - mean[:, None]) ** 2).sum(axis=-1) for a in arrays) / total
    std = np.sqrt(var)
    zero = std == 0
    if zero.any():
        raise PreprocessError(f"{ELECTRODES[int(np.argmax(zero))]}: zero variance")
    return ChannelStats(mean, std)


def compute_stats(recs) -> ChannelStats:
    return stats_from_arrays(r.data for r in recs)


def standardize_array(x: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """z-score an array whose first axis is the 12 electrodes."""
    if x.shape[0] != N_ELECTRODES:
        raise PreprocessError("standardize: missing channel in input")
    shape = (N_ELECTRODES,) + (1,) * (x.ndim - 1)
    return (x - stats.mean.reshape(shape)) / stats.std.reshape(shape)


def standardize(rec: Recording, stats: ChannelStats) -> Recording:
    return rec.replace_data(standardize_array(rec.data, stats))


def unstandardize(rec: Recording, stats: ChannelStats) -> Recording:
    return rec.replace_data(rec.data * stats.std[:, None] + stats.mean[:, None])

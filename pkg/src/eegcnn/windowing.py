"""Fixed-length windows with majority-vote binary labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Recording

log = logging.getLogger(__name__)

TIE = None


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    window_s: float = 4.0
    overlap_s: float = 0.0
    binarize_threshold: float = 0.0
    tie_policy: str = "drop"

    def __post_init__(self):
        if not 1.0 <= self.window_s <= 10.0:
            raise WindowError(f"window.window_s: must be in [1, 10], got {self.window_s}")
        if not 0 <= self.overlap_s < self.window_s:
            raise WindowError("window.overlap_s: need 0 <= overlap_s < window_s")
        if self.tie_policy != "drop":
            raise WindowError(f"window.tie_policy: unsupported {self.tie_policy!r}")

    @property
    def stride_s(self) -> float:
        return self.window_s - self.overlap_s

    def length(self, sample_rate_hz: float) -> int:
        return int(round(self.window_s * sample_rate_hz))

    def stride(self, sample_rate_hz: float) -> int:
        return int(round(self.stride_s * sample_rate_hz))


@dataclass(frozen=True, eq=False)
class Window:
    """One labeled window, rows in canonical electrode order: shape (12, L)."""

    data: np.ndarray
    arousal: int
    valence: int
    subject_id: str
    song_id: str
    start_sample: int

    def label(self, target: str) -> int:
        return self.arousal if target == "arousal" else self.valence


@dataclass
class WindowTally:
    windows: int = 0
    kept: int = 0
    ties: dict = field(default_factory=lambda: {"arousal": 0, "valence": 0})

    @property
    def dropped(self) -> int:
        return self.windows - self.kept


def window_count(n: int, length: int, stride: int) -> int:
    if n < length:
        return 0
    return (n - length) // stride + 1


def segment(rec: Recording, spec: WindowSpec) -> list[tuple[int, int]]:
    length = spec.length(rec.sample_rate_hz)
    stride = spec.stride(rec.sample_rate_hz)
    if stride < 1:
        raise WindowError("window stride rounds to zero samples")
    n = rec.n_samples
    if n < length:
        raise WindowError(
            f"recording {rec.subject_id}/{rec.song_id} has {n} samples, shorter than one window ({length})")
    return [(s, s + length) for s in range(0, n - length + 1, stride)]


def majority_label(values, start: int = 0, end: int | None = None, threshold: float = 0.0):
    """Binarize ``values[start:end] > threshold`` and take the strict majority.

    Returns 0 or 1, or ``TIE`` (None) on an exact split.
    """
    v = np.asarray(values)[start:end]
    if v.size == 0:
        raise WindowError("majority_label: empty sample range")
    ones = int(np.count_nonzero(v > threshold))
    zeros = v.size - ones
    if ones > zeros:
        return 1
    if zeros > ones:
        return 0
    return TIE


def build_instances(recs, spec: WindowSpec, tally: WindowTally | None = None) -> list[Window]:
    """Window every recording; windows with a tied label on either target are dropped."""
    tally = WindowTally() if tally is None else tally
    out = []
    for rec in recs:
        for start, end in segment(rec, spec):
            tally.windows += 1
            a = majority_label(rec.arousal, start, end, spec.binarize_threshold)
            v = majority_label(rec.valence, start, end, spec.binarize_threshold)
            if a is TIE:
                tally.ties["arousal"] += 1
            if v is TIE:
                tally.ties["valence"] += 1
            if a is TIE or v is TIE:
                log.debug("dropping tied window %s/%s@%d", rec.subject_id, rec.song_id, start)
                continue
            tally.kept += 1
            out.append(Window(rec.data[:, start:end], a, v, rec.subject_id, rec.song_id, start))
    if tally.dropped:
        log.info("dropped %d of %d windows on label ties", tally.dropped, tally.windows)
    return out

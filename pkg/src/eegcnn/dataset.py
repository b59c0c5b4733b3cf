"""Session recordings: on-disk format, validation and synthetic generation.

A session file is a UTF-8 CSV with header::

    t,Fp1,Fp2,F3,F4,F7,F8,Fz,C3,C4,T3,T4,Pz,arousal,valence

one row per sample. A manifest is a JSON document listing the sessions of a
dataset together with their common sampling rate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ELECTRODES: tuple[str, ...] = (
    "Fp1", "Fp2", "F3", "F4", "F7", "F8", "Fz", "C3", "C4", "T3", "T4", "Pz",
)
N_ELECTRODES = len(ELECTRODES)
HEADER: tuple[str, ...] = ("t",) + ELECTRODES + ("arousal", "valence")

# relative tolerance on the row spacing of the `t` column
_T_RTOL = 1e-6


class DatasetError(ValueError):
    """Raised when a session file, manifest or synthetic spec is invalid."""


def parse_electrode(name: str) -> str:
    if name not in ELECTRODES:
        raise DatasetError(f"unknown electrode label {name!r}")
    return name


def electrode_index(name: str) -> int:
    return ELECTRODES.index(parse_electrode(name))


@dataclass(frozen=True, eq=False)
class Recording:
    """One subject/song session.

    ``data`` has shape (12, n_samples) with rows in canonical electrode order
    (µV). ``arousal`` and ``valence`` are per-sample annotations in [-1, 1].
    """

    subject_id: str
    song_id: str
    sample_rate_hz: float
    data: np.ndarray
    arousal: np.ndarray
    valence: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        arousal = np.array(self.arousal, dtype=np.float64)
        valence = np.array(self.valence, dtype=np.float64)
        if not self.sample_rate_hz > 0 or not math.isfinite(self.sample_rate_hz):
            raise DatasetError(f"sample_rate_hz: must be positive, got {self.sample_rate_hz}")
        if data.ndim != 2 or data.shape[0] != N_ELECTRODES:
            raise DatasetError(f"data: expected shape (12, n), got {data.shape}")
        n = data.shape[1]
        if n < 1:
            raise DatasetError("data: recording has no samples")
        for name, ann in (("arousal", arousal), ("valence", valence)):
            if ann.shape != (n,):
                raise DatasetError(f"{name}: length {ann.shape} does not match {n} samples")
            if not np.all(np.isfinite(ann)):
                raise DatasetError(f"{name}: non-finite annotation value")
            if np.any(np.abs(ann) > 1.0):
                raise DatasetError(f"{name}: annotation out of range [-1, 1]")
        bad = ~np.all(np.isfinite(data), axis=1)
        if bad.any():
            raise DatasetError(f"{ELECTRODES[int(np.argmax(bad))]}: non-finite sample value")
        for arr in (data, arousal, valence):
            arr.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "arousal", arousal)
        object.__setattr__(self, "valence", valence)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def channel(self, name: str) -> np.ndarray:
        return self.data[electrode_index(name)]

    def replace_data(self, data: np.ndarray, sample_rate_hz: float | None = None,
                     arousal=None, valence=None) -> "Recording":
        return Recording(
            self.subject_id,
            self.song_id,
            self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz,
            data,
            self.arousal if arousal is None else arousal,
            self.valence if valence is None else valence,
        )


# ---------------------------------------------------------------------------
# session files


def load_recording(path, expected_rate: float, subject_id: str | None = None,
                   song_id: str | None = None) -> Recording:
    """Read and validate a session CSV.

    Columns may appear in any order; the result is in canonical order.
    ``subject_id``/``song_id`` default to the parent directory and file stem.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{path}: session file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    seen = set()
    for name in header:
        if name in seen:
            raise DatasetError(f"{path}: duplicate channel column {name!r}")
        seen.add(name)
    for name in HEADER:
        if name not in seen:
            kind = "channel" if name in ELECTRODES else "column"
            raise DatasetError(f"{path}: missing {kind} {name!r}")
    extra = seen.difference(HEADER)
    if extra:
        raise DatasetError(f"{path}: unexpected columns {sorted(extra)}")
    if not rows:
        raise DatasetError(f"{path}: no samples")

    values = np.empty((len(rows), len(header)), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        try:
            values[i] = [float(v) for v in row]
        except ValueError as exc:
            raise DatasetError(f"{path}: row {i + 2}: {exc}") from None

    col = {name: values[:, header.index(name)] for name in HEADER}
    for name in HEADER:
        if not np.all(np.isfinite(col[name])):
            raise DatasetError(f"{path}: {name}: non-finite value")

    t = col["t"]
    if len(t) > 1:
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise DatasetError(f"{path}: t: rows not strictly increasing")
        rate = 1.0 / float(np.mean(dt))
        if not math.isclose(rate, expected_rate, rel_tol=_T_RTOL):
            raise DatasetError(f"{path}: t: sample rate {rate:.6g} Hz does not match expected {expected_rate} Hz")
        if np.max(np.abs(dt * expected_rate - 1.0)) > 1e-3:
            raise DatasetError(f"{path}: t: irregular sample spacing")

    data = np.stack([col[name] for name in ELECTRODES])
    return Recording(
        subject_id if subject_id is not None else path.parent.name,
        song_id if song_id is not None else path.stem,
        float(expected_rate),
        data,
        col["arousal"],
        col["valence"],
    )


def write_recording(rec: Recording, path) -> Path:
    """Write ``rec`` in canonical session format (shortest round-trip floats)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = rec.n_samples
    cols = [rec.data[i] for i in range(N_ELECTRODES)] + [rec.arousal, rec.valence]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(HEADER) + "\n")
        for i in range(n):
            fields = [repr(i / rec.sample_rate_hz)]
            fields.extend(repr(float(c[i])) for c in cols)
            fh.write(",".join(fields) + "\n")
    return path


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    subject: str
    song: str
    path: Path


@dataclass(frozen=True)
class DatasetManifest:
    sample_rate_hz: float
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise DatasetError("manifest: recordings list is empty")
        keys = [(e.subject, e.song) for e in self.entries]
        if len(set(keys)) != len(keys):
            raise DatasetError("manifest: duplicate (subject, song) pair")
        if not self.sample_rate_hz > 0:
            raise DatasetError("manifest: sample_rate_hz must be positive")

    @property
    def subjects(self) -> list[str]:
        return sorted({e.subject for e in self.entries})


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        rate = float(doc["sample_rate_hz"])
        items = doc["recordings"]
        entries = tuple(
            ManifestEntry(str(it["subject"]), str(it["song"]), path.parent / it["path"])
            for it in items
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed manifest ({exc})") from None
    return DatasetManifest(rate, entries)


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    root = path.parent
    doc = {
        "sample_rate_hz": manifest.sample_rate_hz,
        "recordings": [
            {"subject": e.subject, "song": e.song,
             "path": Path(e.path).relative_to(root).as_posix() if Path(e.path).is_absolute()
             else Path(e.path).as_posix()}
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def load_dataset(manifest_path) -> list[Recording]:
    manifest = load_manifest(manifest_path)
    return [
        load_recording(e.path, manifest.sample_rate_hz, subject_id=e.subject, song_id=e.song)
        for e in manifest.entries
    ]


# ---------------------------------------------------------------------------
# synthetic sessions


@dataclass(frozen=True)
class ClassSignature:
    freq_hz: float
    amplitude: float = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic dataset.

    Each recording alternates between class-0 and class-1 segments of
    ``segment_s`` seconds, starting with a seeded random class. During a
    class-k segment the electrodes in ``electrodes`` carry
    ``amplitude_k * sin(2*pi*freq_k*t)`` with ``t`` the recording time;
    every channel also carries white noise of std ``noise_sigma``.
    Annotations are ``+annotation_level`` (class 1) or ``-annotation_level``
    (class 0) on both arousal and valence.
    """

    n_subjects: int = 12
    songs_per_subject: int = 1
    duration_s: float = 40.0
    sample_rate_hz: float = 250.0
    noise_sigma: float = 0.5
    segment_s: float = 10.0
    class0: ClassSignature = ClassSignature(6.0, 1.0)
    class1: ClassSignature = ClassSignature(10.0, 1.0)
    electrodes: tuple[str, ...] = ("Fp1", "Fp2", "F3", "F4")
    annotation_level: float = 0.5

    def __post_init__(self):
        if self.n_subjects < 1:
            raise DatasetError("n_subjects: must be >= 1")
        if self.songs_per_subject < 1:
            raise DatasetError("songs_per_subject: must be >= 1")
        if not self.sample_rate_hz > 0:
            raise DatasetError("sample_rate_hz: must be positive")
        if round(self.duration_s * self.sample_rate_hz) < 1:
            raise DatasetError("duration_s: zero-length recording")
        if self.noise_sigma < 0:
            raise DatasetError("noise_sigma: must be >= 0")
        if not self.segment_s > 0:
            raise DatasetError("segment_s: must be positive")
        nyquist = self.sample_rate_hz / 2
        for name, sig in (("class0", self.class0), ("class1", self.class1)):
            if not 0 <= sig.freq_hz < nyquist:
                raise DatasetError(f"{name}.freq_hz: {sig.freq_hz} Hz is not below Nyquist ({nyquist} Hz)")
        for e in self.electrodes:
            parse_electrode(e)
        if not 0 < self.annotation_level <= 1:
            raise DatasetError("annotation_level: must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        try:
            for key in ("class0", "class1"):
                if key in d:
                    d[key] = ClassSignature(**d[key])
            if "electrodes" in d:
                d["electrodes"] = tuple(d["electrodes"])
            return cls(**d)
        except TypeError as exc:
            raise DatasetError(f"synthetic spec: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "songs_per_subject": self.songs_per_subject,
            "duration_s": self.duration_s,
            "sample_rate_hz": self.sample_rate_hz,
            "noise_sigma": self.noise_sigma,
            "segment_s": self.segment_s,
            "class0": {"freq_hz": self.class0.freq_hz, "amplitude": self.class0.amplitude},
            "class1": {"freq_hz": self.class1.freq_hz, "amplitude": self.class1.amplitude},
            "electrodes": list(self.electrodes),
            "annotation_level": self.annotation_level,
        }


def synthetic_classes(spec: SyntheticSpec, first_class: int, n: int) -> np.ndarray:
    """Per-sample class index for a recording whose first segment is ``first_class``."""
    seg = max(1, round(spec.segment_s * spec.sample_rate_hz))
    return ((np.arange(n) // seg + first_class) % 2).astype(np.int64)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> list[Recording]:
    rng = np.random.default_rng(seed)
    n = round(spec.duration_s * spec.sample_rate_hz)
    t = np.arange(n) / spec.sample_rate_hz
    rows = [electrode_index(e) for e in spec.electrodes]
    waves = [
        spec.class0.amplitude * np.sin(2 * np.pi * spec.class0.freq_hz * t),
        spec.class1.amplitude * np.sin(2 * np.pi * spec.class1.freq_hz * t),
    ]
    width = len(str(spec.n_subjects))
    swidth = len(str(spec.songs_per_subject))
    recs = []
    for s in range(spec.n_subjects):
        for k in range(spec.songs_per_subject):
            first = int(rng.integers(2))
            cls = synthetic_classes(spec, first, n)
            data = np.zeros((N_ELECTRODES, n))
            if spec.noise_sigma > 0:
                data += rng.normal(0.0, spec.noise_sigma, size=(N_ELECTRODES, n))
            signal = np.where(cls == 1, waves[1], waves[0])
            data[rows] += signal
            ann = np.where(cls == 1, spec.annotation_level, -spec.annotation_level)
            recs.append(Recording(
                f"S{s + 1:0{width}d}", f"song{k + 1:0{swidth}d}",
                float(spec.sample_rate_hz), data, ann, ann.copy(),
            ))
    return recs


def write_dataset(recs: list[Recording], out_dir) -> Path:
    """Write sessions as ``<out>/<subject>/<song>.csv`` plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not recs:
        raise DatasetError("no recordings to write")
    rates = {r.sample_rate_hz for r in recs}
    if len(rates) != 1:
        raise DatasetError("recordings have differing sample rates")
    entries = []
    for rec in recs:
        rel = Path(rec.subject_id) / f"{rec.song_id}.csv"
        write_recording(rec, out_dir / rel)
        entries.append(ManifestEntry(rec.subject_id, rec.song_id, rel))
    return write_manifest(DatasetManifest(rates.pop(), tuple(entries)), out_dir / "manifest.json")

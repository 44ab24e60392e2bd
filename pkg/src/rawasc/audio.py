"""Waveform and dataset-manifest loading.

Samples are kept on the scale the network weights expect: PCM-16 integers
mapped linearly onto [-256, 256].
"""
from __future__ import annotations

import csv
import logging
import wave
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, FormatError, SchemaError, UnsupportedFormatError

log = logging.getLogger(__name__)

PCM16_FULL_SCALE = 32768.0
SAMPLE_SCALE = 256.0
MANIFEST_COLUMNS = ("path", "label", "fold")
CLASS_DECLARATION = "#classes"


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise FormatError(f"waveform {self.id!r} must be a non-empty 1-D signal")
        if not np.all(np.isfinite(samples)):
            raise FormatError(f"waveform {self.id!r} contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise FormatError(f"waveform {self.id!r}: sample rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    def fit_length(self, n_samples):
        """Crop or zero-pad to exactly ``n_samples`` samples."""
        if n_samples <= 0 or n_samples == self.samples.size:
            return self
        out = np.zeros(n_samples)
        k = min(n_samples, self.samples.size)
        out[:k] = self.samples[:k]
        return Waveform(out, self.sample_rate, self.id)


def read_wav(path) -> Waveform:
    """Read a PCM-16 WAV file, averaging channels to mono."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedFormatError(f"{path}: {exc}") from exc
        raise FormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if width != 2:
        raise UnsupportedFormatError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is read")
    frames = np.frombuffer(raw, dtype="<i2")
    if frames.size == 0 or frames.size % n_channels:
        raise FormatError(f"{path}: no complete audio frames")
    pcm = frames.reshape(-1, n_channels).astype(np.float64).mean(axis=1)
    return Waveform(pcm * (SAMPLE_SCALE / PCM16_FULL_SCALE), rate, str(path))


def write_wav(path, waveform: Waveform):
    """Write a mono PCM-16 WAV; inverse of :func:`read_wav` up to quantization."""
    pcm = np.rint(waveform.samples * (PCM16_FULL_SCALE / SAMPLE_SCALE))
    pcm = np.clip(pcm, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(pcm.tobytes())


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: int
    fold: int

    @property
    def id(self):
        return str(self.path)


@dataclass
class DatasetManifest:
    entries: list
    class_names: list
    root: Path = field(default_factory=Path)

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def labels(self):
        return np.array([e.label for e in self.entries], dtype=int)

    @property
    def folds(self):
        return np.array([e.fold for e in self.entries], dtype=int)

    def class_counts(self):
        counts = Counter(e.label for e in self.entries)
        return [counts.get(c, 0) for c in range(self.n_classes)]

    def fold_ids(self):
        return sorted({e.fold for e in self.entries})

    def resolve(self, entry):
        return entry.path if entry.path.is_absolute() else self.root / entry.path


def load_manifest(path) -> DatasetManifest:
    """Parse a tab-separated ``path<TAB>label<TAB>fold`` manifest.

    An optional ``#classes<TAB>name<TAB>name...`` line before the header fixes
    the class list and its order; without it classes are the sorted distinct
    labels. Relative recording paths are resolved against the manifest's
    directory.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t") if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyDatasetError(f"{path}: manifest is empty")

    declared = None
    if rows[0][0].strip() == CLASS_DECLARATION:
        declared = [c.strip() for c in rows[0][1:] if c.strip()]
        rows = rows[1:]
    if not rows or tuple(c.strip() for c in rows[0][:3]) != MANIFEST_COLUMNS:
        raise SchemaError(f"{path}: expected header {'/'.join(MANIFEST_COLUMNS)}")
    body = rows[1:]
    if not body:
        raise EmptyDatasetError(f"{path}: manifest has a header but no entries")

    parsed = []
    for lineno, row in enumerate(body, start=2 + (declared is not None)):
        if len(row) < 3 or not row[2].strip():
            raise SchemaError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        try:
            fold = int(row[2])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: fold {row[2]!r} is not an integer") from exc
        parsed.append((row[0].strip(), row[1].strip(), fold))

    class_names = declared if declared is not None else sorted({p[1] for p in parsed})
    index = {name: i for i, name in enumerate(class_names)}
    if len(index) < 2:
        raise SchemaError(f"{path}: need at least 2 classes, found {len(index)}")
    entries = []
    for rec, label, fold in parsed:
        if label not in index:
            raise SchemaError(f"{path}: label {label!r} is not a declared class")
        entries.append(ManifestEntry(Path(rec), index[label], fold))

    manifest = DatasetManifest(entries, list(class_names), path.parent)
    for f in manifest.fold_ids():
        present = {e.label for e in entries if e.fold == f}
        missing = [class_names[c] for c in range(len(class_names)) if c not in present]
        if missing:
            log.warning("fold %d has no entries for classes %s", f, ", ".join(missing))
    return manifest


def write_manifest(path, rows, class_names=None):
    """Write ``(path, label_name, fold)`` rows in the manifest format."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        if class_names is not None:
            w.writerow([CLASS_DECLARATION, *class_names])
        w.writerow(MANIFEST_COLUMNS)
        for rec, label, fold in rows:
            w.writerow([str(rec), label, int(fold)])

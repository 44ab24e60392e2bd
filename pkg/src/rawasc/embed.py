"""Layer data matrices, PCA embeddings and singular-value spectra."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DegenerateSpectrumError, DimensionError, ParameterError

# cumulative-variance comparisons tolerate roundoff in the running sum
_VARIANCE_TOL = 1e-12


@dataclass
class LayerDataset:
    """Columns are recordings, ordered class by class (``[Y_1, ..., Y_C]``)."""

    Y: np.ndarray
    labels: np.ndarray
    layer: str = ""
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.Y.ndim != 2 or self.Y.shape[1] != self.labels.size:
            raise DimensionError(f"layer {self.layer}: {self.Y.shape} matrix vs {self.labels.size} labels")

    @property
    def n_features(self):
        return self.Y.shape[0]

    @property
    def n_samples(self):
        return self.Y.shape[1]

    def class_columns(self, classes):
        return self.Y[:, np.isin(self.labels, np.atleast_1d(classes))]


def assemble_layer_dataset(embeddings, labels, n_classes=None) -> LayerDataset:
    """Stack pooled embeddings as columns, grouped by class (stable within class)."""
    if not embeddings:
        raise ConsistencyError("no embeddings to assemble")
    labels = np.asarray(labels, dtype=int)
    if labels.size != len(embeddings):
        raise DimensionError(f"{len(embeddings)} embeddings vs {labels.size} labels")
    layers = {e.layer for e in embeddings}
    if len(layers) != 1:
        raise ConsistencyError(f"embeddings come from several layers: {sorted(layers)}")
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(labels.tolist()))
        if missing:
            raise ConsistencyError(f"classes without examples: {missing}")
    order = np.argsort(labels, kind="stable")
    Y = np.stack([embeddings[i].values for i in order], axis=1)
    return LayerDataset(Y, labels[order], layers.pop(), [embeddings[i].recording_id for i in order])


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    singular_values: np.ndarray

    @property
    def d(self):
        return self.components.shape[0]

    @property
    def n_features(self):
        return self.mean.size

    def explained_variance_ratio(self):
        energy = self.singular_values ** 2
        total = energy.sum()
        return energy / total if total > 0 else np.zeros_like(energy)

    def truncate(self, d):
        if not 1 <= d <= self.components.shape[0]:
            raise ParameterError(f"cannot truncate a {self.d}-component model to {d}")
        return PcaModel(self.mean, self.components[:d], self.singular_values)


def _as_matrix(y, classes=None):
    if isinstance(y, LayerDataset):
        return y.Y if classes is None else y.class_columns(classes)
    if classes is not None:
        raise ParameterError("class filtering needs a LayerDataset")
    return np.asarray(y, dtype=np.float64)


def pca_fit(y, d=None, classes=None) -> PcaModel:
    """Fit PCA on the columns of ``y`` via SVD of the centered matrix.

    ``d=None`` keeps every component (``min(n_features, n_samples)``).
    ``classes`` restricts the fit to those labels, e.g. one scene at a time.
    """
    Y = _as_matrix(y, classes)
    n, m = Y.shape
    full = min(n, m)
    d = full if d is None else int(d)
    if not 1 <= d <= full:
        raise ParameterError(f"d={d} outside [1, {full}]")
    mean = Y.mean(axis=1)
    U, s, _ = np.linalg.svd(Y - mean[:, None], full_matrices=False)
    T = U[:, :d].T.copy()
    # deterministic signs: largest-magnitude entry of each component positive
    pivots = np.argmax(np.abs(T), axis=1)
    T *= np.sign(T[np.arange(d), pivots])[:, None]
    return PcaModel(mean, T, s)


def pca_transform(model: PcaModel, y) -> np.ndarray:
    Y = np.asarray(y, dtype=np.float64)
    vector = Y.ndim == 1
    if vector:
        Y = Y[:, None]
    if Y.shape[0] != model.n_features:
        raise DimensionError(f"model expects {model.n_features} rows, got {Y.shape[0]}")
    Z = model.components @ (Y - model.mean[:, None])
    return Z[:, 0] if vector else Z


def singular_spectrum(y, classes=None) -> np.ndarray:
    """Singular values of the centered data divided by the largest one."""
    Y = _as_matrix(y, classes)
    s = np.linalg.svd(Y - Y.mean(axis=1, keepdims=True), compute_uv=False)
    if s.size == 0 or s[0] <= 0:
        raise DegenerateSpectrumError("centered data matrix is identically zero")
    return s / s[0]


def dims_for_variance(model: PcaModel, ratio) -> int:
    """Smallest d whose leading components carry at least ``ratio`` of the variance."""
    if not 0 < ratio <= 1:
        raise ParameterError(f"variance ratio {ratio} outside (0, 1]")
    energy = model.singular_values ** 2
    total = energy.sum()
    if total <= 0:
        raise DegenerateSpectrumError("model has zero total variance")
    cumulative = np.cumsum(energy) / total
    return int(np.searchsorted(cumulative, ratio - _VARIANCE_TOL) + 1)


def write_spectra_csv(path, spectra):
    """``spectra`` maps layer -> normalized singular values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "index", "normalized_singular_value"])
        for layer, values in spectra.items():
            for i, v in enumerate(values):
                w.writerow([layer, i, repr(float(v))])

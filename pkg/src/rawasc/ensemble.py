"""Per-layer kernel classifiers, late fusion and cross-validated pipelines.

Each layer gets a multinomial logistic model on a polynomial-kernel
expansion of its (optionally compressed) embeddings. Layer probabilities
are fused by their arithmetic mean (or geometric mean, for ablations).
"""
from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from .acdl import AcdlConfig, AcdlResult, acdl_fit
from .embed import LayerDataset, PcaModel, dims_for_variance, pca_fit, pca_transform
from .errors import ConsistencyError, DegenerateLabelsError, DimensionError, ParameterError

log = logging.getLogger(__name__)

FUSION_RULES = ("mean", "geometric")


@dataclass(frozen=True)
class KernelParams:
    degree: int = 2
    coef0: float = 1.0
    scale: float = 1.0
    regularization: float = 1e-2

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ParameterError(f"kernel degree must be a positive integer, got {self.degree}")
        if self.scale <= 0 or self.regularization <= 0:
            raise ParameterError("kernel scale and regularization must be positive")


def default_grid():
    return [KernelParams(d, c, 1.0, r)
            for d, c, r in itertools.product((2, 3), (0.0, 1.0), (1e-3, 1e-2, 1e-1))]


def poly_kernel(u, v, p: KernelParams):
    """``(scale <u, v> + coef0) ** degree``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"kernel arguments have shapes {u.shape} and {v.shape}")
    return float((p.scale * np.dot(u, v) + p.coef0) ** p.degree)


def kernel_matrix(U, V, p: KernelParams):
    """Kernel between the columns of ``U`` (d, m) and ``V`` (d, k)."""
    if U.shape[0] != V.shape[0]:
        raise DimensionError(f"kernel arguments have {U.shape[0]} and {V.shape[0]} rows")
    return (p.scale * (U.T @ V) + p.coef0) ** p.degree


@dataclass(frozen=True)
class LayerClassifier:
    """Kernel expansion ``scores = coef @ K(support, x) + bias`` followed by softmax.

    ``center`` and ``norm`` standardize inputs the way the training columns
    were standardized (mean squared column norm of one).
    """

    support: np.ndarray
    coef: np.ndarray
    bias: np.ndarray
    kernel: KernelParams
    layer: str
    n_classes: int
    center: np.ndarray
    norm: float
    loss_trace: tuple = ()

    def standardize(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] != self.center.size:
            raise DimensionError(f"layer {self.layer}: expected {self.center.size} rows, got shape {z.shape}")
        return (z - self.center[:, None]) / self.norm


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ParameterError(f"labels outside 0..{n_classes - 1}")
    return labels


def train_layer_classifier(z, labels, p: KernelParams = KernelParams(), layer="",
                           n_classes=None, max_iter=500) -> LayerClassifier:
    """Fit a kernel multinomial logistic model.

    Minimizes mean cross-entropy plus ``regularization * ||coef||^2`` (the
    bias is not penalized) with L-BFGS; the loss at every accepted iterate is
    kept in ``loss_trace``.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionError("training data must be a (features, samples) matrix")
    C = int(np.max(labels)) + 1 if n_classes is None else int(n_classes)
    labels = _check_labels(labels, C)
    M = z.shape[1]
    if labels.size != M:
        raise DimensionError(f"{M} columns vs {labels.size} labels")
    if np.unique(labels).size < 2:
        raise DegenerateLabelsError(f"layer {layer}: training data holds a single class")
    if M < C:
        raise ParameterError(f"layer {layer}: {M} training columns for {C} classes")

    center = z.mean(axis=1)
    zc = z - center[:, None]
    norm = float(np.sqrt(np.mean(np.sum(zc ** 2, axis=0))))
    norm = norm if norm > 0 else 1.0
    zs = zc / norm
    K = kernel_matrix(zs, zs, p)
    G = np.zeros((C, M))
    G[labels, np.arange(M)] = 1.0
    reg = p.regularization

    def loss_grad(theta):
        a = theta[:C * M].reshape(C, M)
        b = theta[C * M:]
        S = a @ K + b[:, None]
        logp = log_softmax(S, axis=0)
        loss = -np.sum(G * logp) / M + reg * np.sum(a * a)
        dS = (np.exp(logp) - G) / M
        grad_a = dS @ K + 2.0 * reg * a
        return loss, np.concatenate([grad_a.ravel(), dS.sum(axis=1)])

    theta0 = np.zeros(C * M + C)
    trace = [loss_grad(theta0)[0]]

    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))

    res = minimize(loss_grad, theta0, jac=True, method="L-BFGS-B", callback=record,
                   options={"maxiter": max_iter, "gtol": 1e-9, "ftol": 1e-13})
    a = res.x[:C * M].reshape(C, M)
    b = res.x[C * M:]
    return LayerClassifier(zs, a, b, p, layer, C, center, norm, tuple(trace))


def predict_proba(clf: LayerClassifier, z):
    """Class probabilities, one column per input column."""
    zs = clf.standardize(z)
    S = clf.coef @ kernel_matrix(clf.support, zs, clf.kernel) + clf.bias[:, None]
    return softmax(S, axis=0)


def late_fuse(probabilities, rule="mean"):
    """Combine per-layer ``(C, k)`` probability matrices into one."""
    if rule not in FUSION_RULES:
        raise ParameterError(f"unknown fusion rule {rule!r}")
    mats = [np.asarray(P, dtype=np.float64) for P in probabilities]
    if not mats:
        raise DimensionError("nothing to fuse")
    if any(P.shape != mats[0].shape for P in mats):
        raise DimensionError(f"layer shapes differ: {[P.shape for P in mats]}")
    stack = np.stack(mats)
    if rule == "mean":
        fused = stack.mean(axis=0)
    else:
        fused = np.exp(np.mean(np.log(np.maximum(stack, np.finfo(float).tiny)), axis=0))
    return fused / fused.sum(axis=0, keepdims=True)


@dataclass
class Evaluation:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    predictions: np.ndarray


def evaluate(fused, truth, n_classes=None) -> Evaluation:
    """Argmax decisions (ties go to the lowest class index) scored against ``truth``.

    ``confusion[i, j]`` counts columns of true class i predicted as j; classes
    absent from ``truth`` get a NaN per-class accuracy.
    """
    fused = np.asarray(fused, dtype=np.float64)
    truth = np.asarray(truth, dtype=int)
    if fused.ndim != 2 or fused.shape[1] != truth.size:
        raise DimensionError(f"{fused.shape} probabilities vs {truth.size} labels")
    C = fused.shape[0] if n_classes is None else int(n_classes)
    pred = np.argmax(fused, axis=0)
    confusion = np.zeros((C, C), dtype=int)
    np.add.at(confusion, (truth, pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / support, np.nan)
    accuracy = float(np.mean(pred == truth)) if truth.size else float("nan")
    return Evaluation(accuracy, per_class, confusion, pred)


@dataclass
class FusionResult:
    per_layer: dict
    fused: np.ndarray
    predictions: np.ndarray
    accuracy: float = float("nan")


# ---------------------------------------------------------------------------
# pipelines

@dataclass(frozen=True)
class DimMode:
    """How each layer's dimensionality is chosen: none, fixed, explained_variance or acdl."""

    kind: str = "acdl"
    value: float | None = None

    KINDS = ("none", "fixed", "explained_variance", "acdl")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ParameterError(f"unknown dimension mode {self.kind!r}")
        if self.kind == "fixed" and (self.value is None or int(self.value) != self.value or self.value < 1):
            raise ParameterError("fixed mode needs a positive integer dimension")
        if self.kind == "explained_variance" and (self.value is None or not 0 < self.value <= 1):
            raise ParameterError("explained_variance mode needs a ratio in (0, 1]")

    @classmethod
    def parse(cls, text):
        """Accept ``acdl``, ``none``, ``fixed:8``, ``fixed(8)``, ``explained_variance:0.99`` ..."""
        m = re.fullmatch(r"\s*([a-z_]+)\s*(?:[:=(]\s*([^)\s]+)\s*\)?)?\s*", str(text))
        if not m:
            raise ParameterError(f"cannot parse dimension mode {text!r}")
        kind, arg = m.groups()
        if kind not in cls.KINDS:
            raise ParameterError(f"unknown dimension mode {kind!r}")
        if kind in ("none", "acdl"):
            if arg is not None:
                raise ParameterError(f"mode {kind} takes no argument")
            return cls(kind)
        if arg is None:
            raise ParameterError(f"mode {kind} needs an argument")
        try:
            value = int(arg) if kind == "fixed" else float(arg)
        except ValueError:
            raise ParameterError(f"bad argument {arg!r} for mode {kind}") from None
        return cls(kind, value)

    def __str__(self):
        if self.value is None:
            return self.kind
        return f"{self.kind}:{self.value:g}" if self.kind != "fixed" else f"fixed:{int(self.value)}"


@dataclass
class PipelineConfig:
    dim_mode: DimMode = field(default_factory=DimMode)
    kernel_grid: list = field(default_factory=default_grid)
    fusion: str = "mean"
    acdl: AcdlConfig = field(default_factory=AcdlConfig)
    acdl_layers: dict = field(default_factory=dict)
    inner_folds: int = 3

    def acdl_for(self, layer):
        return self.acdl_layers.get(layer, self.acdl)


@dataclass
class LayerModel:
    layer: str
    n_features: int
    d: int
    transform: PcaModel | None
    classifier: LayerClassifier
    acdl: AcdlResult | None = None

    @property
    def compression_ratio(self):
        return 1.0 - self.d / self.n_features

    def embed(self, Y):
        if self.transform is None:
            return np.asarray(Y, dtype=np.float64)
        return pca_transform(self.transform, Y)


def choose_dimension(ds: LayerDataset, mode: DimMode, acdl_config=None, n_classes=None):
    """Return ``(d, pca_model_or_None, acdl_result_or_None)`` for one training layer."""
    n, m = ds.Y.shape
    if mode.kind == "none":
        return n, None, None
    full = pca_fit(ds.Y)
    limit = min(n, m)
    result = None
    if mode.kind == "fixed":
        d = int(mode.value)
    elif mode.kind == "explained_variance":
        d = dims_for_variance(full, mode.value)
    else:
        result = acdl_fit(ds, acdl_config or AcdlConfig(), n_classes)
        d = result.d_selected
    if d > limit:
        log.warning("layer %s: %s asks for %d dims, only %d available", ds.layer, mode, d, limit)
        d = limit
    return d, full.truncate(d), result


def stratified_folds(labels, k):
    """Deterministic fold index per column: round-robin within each class."""
    labels = np.asarray(labels, dtype=int)
    out = np.zeros(labels.size, dtype=int)
    for c in np.unique(labels):
        cols = np.flatnonzero(labels == c)
        out[cols] = np.arange(cols.size) % k
    return out


def select_kernel(z, labels, grid, n_classes, k=3, layer=""):
    """Grid entry with the best inner cross-validated accuracy (first on ties)."""
    if len(grid) == 1:
        return grid[0]
    inner = stratified_folds(labels, k)
    best, best_acc = grid[0], -1.0
    for p in grid:
        correct = 0
        for f in range(k):
            test = inner == f
            train = ~test
            if not test.any() or np.unique(labels[train]).size < 2:
                continue
            clf = train_layer_classifier(z[:, train], labels[train], p, layer, n_classes)
            correct += int(np.sum(np.argmax(predict_proba(clf, z[:, test]), axis=0) == labels[test]))
        acc = correct / labels.size
        if acc > best_acc:
            best, best_acc = p, acc
    return best


def fit_layer(ds: LayerDataset, config: PipelineConfig, n_classes) -> LayerModel:
    d, pca, result = choose_dimension(ds, config.dim_mode, config.acdl_for(ds.layer), n_classes)
    z = ds.Y if pca is None else pca_transform(pca, ds.Y)
    params = select_kernel(z, ds.labels, config.kernel_grid, n_classes, config.inner_folds, ds.layer)
    clf = train_layer_classifier(z, ds.labels, params, ds.layer, n_classes)
    return LayerModel(ds.layer, ds.n_features, d, pca, clf, result)


def fit_pipeline(datasets, config: PipelineConfig, n_classes=None):
    """Fit one :class:`LayerModel` per layer on training datasets."""
    _check_aligned(datasets)
    if n_classes is None:
        n_classes = int(max(ds.labels.max() for ds in datasets.values())) + 1
    return {layer: fit_layer(ds, config, n_classes) for layer, ds in datasets.items()}


def predict_pipeline(models, matrices, fusion="mean", truth=None) -> FusionResult:
    """Per-layer probabilities and their fusion for ``{layer: (n_l, k) matrix}``."""
    per_layer = {layer: predict_proba(m.classifier, m.embed(matrices[layer]))
                 for layer, m in models.items()}
    fused = late_fuse(list(per_layer.values()), fusion)
    pred = np.argmax(fused, axis=0)
    acc = float(np.mean(pred == np.asarray(truth))) if truth is not None else float("nan")
    return FusionResult(per_layer, fused, pred, acc)


def _check_aligned(datasets):
    if not datasets:
        raise ConsistencyError("no layers given")
    first = next(iter(datasets.values()))
    for layer, ds in datasets.items():
        if not np.array_equal(ds.labels, first.labels):
            raise ConsistencyError(f"layer {layer}: columns are not aligned with the other layers")


@dataclass
class FoldResult:
    fold: int
    test_index: np.ndarray
    accuracy: float
    layer_accuracy: dict
    dims: dict
    fusion: FusionResult
    models: dict | None = None


@dataclass
class CVResult:
    folds: list
    skipped: list

    @property
    def accuracies(self):
        return [f.accuracy for f in self.folds]

    @property
    def mean_accuracy(self):
        return float(np.mean(self.accuracies)) if self.folds else float("nan")


def cross_validate(datasets, folds, config: PipelineConfig = None, n_classes=None,
                   keep_models=False) -> CVResult:
    """Hold out each fold in turn; every model is fitted on the training columns only.

    A fold whose training or test split misses a class is skipped with a
    warning and listed in ``skipped``.
    """
    config = config or PipelineConfig()
    _check_aligned(datasets)
    first = next(iter(datasets.values()))
    labels = first.labels
    folds = np.asarray(folds)
    if folds.size != labels.size:
        raise DimensionError(f"{folds.size} fold ids for {labels.size} columns")
    fold_ids = np.unique(folds)
    if fold_ids.size < 2:
        raise ParameterError("cross-validation needs at least two folds")
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)

    results, skipped = [], []
    for f in fold_ids:
        test = folds == f
        train = ~test
        missing = sorted(set(range(C)) - set(labels[train].tolist()))
        missing_test = sorted(set(range(C)) - set(labels[test].tolist()))
        if missing or missing_test:
            log.warning("fold %s skipped: classes %s missing from the %s split", f,
                        missing or missing_test, "training" if missing else "test")
            skipped.append(f.item() if hasattr(f, "item") else f)
            continue
        train_sets = {layer: LayerDataset(ds.Y[:, train], ds.labels[train], layer,
                                          [ds.ids[i] for i in np.flatnonzero(train)] if ds.ids else [])
                      for layer, ds in datasets.items()}
        models = fit_pipeline(train_sets, config, C)
        fusion = predict_pipeline(models, {layer: ds.Y[:, test] for layer, ds in datasets.items()},
                                  config.fusion, labels[test])
        layer_acc = {layer: float(np.mean(np.argmax(P, axis=0) == labels[test]))
                     for layer, P in fusion.per_layer.items()}
        results.append(FoldResult(f.item() if hasattr(f, "item") else f, np.flatnonzero(test),
                                  fusion.accuracy, layer_acc,
                                  {layer: m.d for layer, m in models.items()}, fusion,
                                  models if keep_models else None))
    return CVResult(results, skipped)

"""End-to-end experiments: featurize, select dimensions, classify, fuse, report.

Configs are INI files::

    [experiment]
    manifest = manifest.tsv      ; TSV with path, label, fold columns
    weights = soundnet.snd       ; SND1 weight container
    taps = conv5, conv6          ; default: p-conv3 ... conv7
    mode = acdl                  ; none | fixed:<d> | explained_variance:<r> | acdl
    fusion = mean                ; mean | geometric
    out_dir = results
    seed = 0

    [network]                    ; default: SoundNet geometry
    filters = 16, 32, 64

    [kernel]                     ; grid searched by inner cross-validation
    degree = 2, 3

    [acdl]                       ; AcdlConfig fields, shared by all layers
    tau = 0.5

    [acdl.conv7]                 ; per-layer overrides
    tau = 0.7

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acdl import AcdlConfig, write_trace_csv
from .audio import load_manifest, read_wav
from .convnet import (SOUNDNET_FILTERS, SOUNDNET_KERNELS, SOUNDNET_POOLS, SOUNDNET_STRIDES,
                      SOUNDNET_TAPS, DEFAULT_EPSILON, conv_block_chain, forward_with_taps,
                      global_sum_pool, AggregatedEmbedding, read_weights)
from .embed import LayerDataset, PcaModel, assemble_layer_dataset, pca_transform, singular_spectrum, write_spectra_csv
from .ensemble import (FUSION_RULES, DimMode, KernelParams, LayerClassifier, LayerModel,
                       PipelineConfig, choose_dimension, cross_validate, fit_pipeline,
                       predict_pipeline)
from .errors import ParameterError, RawAscError, SchemaError, StageError

log = logging.getLogger(__name__)

VARIANCE_RATIOS = (1.0, 0.999, 0.99, 0.98, 0.95, 0.90, 0.85)

EXPERIMENT_KEYS = {
    "manifest": "dataset manifest (TSV: path, label, fold)",
    "weights": "network weights (SND1 container)",
    "taps": "comma-separated tap names (default p-conv3 ... conv7)",
    "mode": "dimension selection: none, fixed:<d>, explained_variance:<r> or acdl (default acdl)",
    "fusion": "late fusion rule: mean or geometric (default mean)",
    "out_dir": "output directory (default results)",
    "seed": "random seed (default 0)",
    "n_samples": "crop or zero-pad every recording to this length; 0 keeps lengths (default 0)",
    "baseline": "also report the uncompressed baseline accuracy (default no)",
    "cache_dir": "embedding cache directory; empty disables caching (default empty)",
    "epsilon": "batchnorm epsilon (default 1e-5)",
    "inner_folds": "inner cross-validation folds for the kernel grid (default 3)",
}
NETWORK_KEYS = ("filters", "kernels", "strides", "pools")
KERNEL_KEYS = {"degree": (2, 3), "coef0": (0.0, 1.0), "regularization": (1e-3, 1e-2, 1e-1),
               "scale": (1.0,)}


@dataclass
class ExperimentConfig:
    manifest: Path | None = None
    weights: Path | None = None
    taps: tuple = SOUNDNET_TAPS
    mode: DimMode = field(default_factory=DimMode)
    fusion: str = "mean"
    out_dir: Path = Path("results")
    seed: int = 0
    n_samples: int = 0
    baseline: bool = False
    cache_dir: Path | None = None
    epsilon: float = DEFAULT_EPSILON
    inner_folds: int = 3
    filters: tuple = SOUNDNET_FILTERS
    kernels: tuple = SOUNDNET_KERNELS
    strides: tuple = SOUNDNET_STRIDES
    pools: tuple = SOUNDNET_POOLS
    kernel_grid: list = field(default_factory=lambda: _grid(KERNEL_KEYS))
    acdl: AcdlConfig = field(default_factory=AcdlConfig)
    acdl_layers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.taps:
            raise ParameterError("tap list is empty")
        if self.fusion not in FUSION_RULES:
            raise ParameterError(f"unknown fusion rule {self.fusion!r}")

    def chain(self):
        return conv_block_chain(self.filters, self.kernels, self.strides, self.pools)

    def pipeline(self, mode=None):
        return PipelineConfig(mode or self.mode, self.kernel_grid, self.fusion, self.acdl,
                              self.acdl_layers, self.inner_folds)

    def replace(self, **changes):
        """Copy with changes; a new seed also reseeds ACDL."""
        cfg = dataclasses.replace(self, **changes)
        if "seed" in changes:
            cfg.acdl = dataclasses.replace(cfg.acdl, seed=cfg.seed)
            cfg.acdl_layers = {k: dataclasses.replace(v, seed=cfg.seed) for k, v in cfg.acdl_layers.items()}
        return cfg


def _grid(values):
    return [KernelParams(int(d), float(c), float(s), float(r)) for d, c, r, s in
            itertools.product(values["degree"], values["coef0"], values["regularization"], values["scale"])]


def _split(text):
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def _numbers(text, kind):
    try:
        return tuple(kind(t) for t in _split(text))
    except ValueError:
        raise SchemaError(f"expected a list of numbers, got {text!r}") from None


def _acdl_fields(section, base: AcdlConfig, where):
    kinds = {f.name: f.type for f in dataclasses.fields(AcdlConfig)}
    changes = {}
    for key, raw in section.items():
        name = "lam" if key == "lambda" else key
        if name not in kinds:
            raise SchemaError(f"[{where}]: unknown key {key!r}")
        kind = kinds[name]
        try:
            if kind == "bool":
                changes[name] = section.getboolean(key)
            elif kind == "int":
                changes[name] = int(raw)
            else:
                changes[name] = float(raw)
        except ValueError:
            raise SchemaError(f"[{where}] {key} = {raw!r} is not a valid value") from None
    return dataclasses.replace(base, **changes)


def load_config(path) -> ExperimentConfig:
    """Parse an INI experiment config; unknown sections or keys are errors."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise SchemaError(f"{path}: {exc}") from None
    base = path.parent

    def resolve(value):
        p = Path(value).expanduser()
        return p if p.is_absolute() else base / p

    kw = {}
    for name in parser.sections():
        if name not in ("experiment", "network", "kernel", "acdl") and not name.startswith("acdl."):
            raise SchemaError(f"{path}: unknown section [{name}]")

    if parser.has_section("experiment"):
        sec = parser["experiment"]
        for key in sec:
            if key not in EXPERIMENT_KEYS:
                raise SchemaError(f"[experiment]: unknown key {key!r}")
        try:
            for key in ("manifest", "weights", "out_dir"):
                if key in sec:
                    kw[key] = resolve(sec[key])
            if sec.get("cache_dir", "").strip():
                kw["cache_dir"] = resolve(sec["cache_dir"])
            if "taps" in sec:
                kw["taps"] = tuple(_split(sec["taps"]))
            if "mode" in sec:
                kw["mode"] = DimMode.parse(sec["mode"])
            if "fusion" in sec:
                kw["fusion"] = sec["fusion"].strip()
            for key in ("seed", "n_samples", "inner_folds"):
                if key in sec:
                    kw[key] = sec.getint(key)
            if "epsilon" in sec:
                kw["epsilon"] = sec.getfloat("epsilon")
            if "baseline" in sec:
                kw["baseline"] = sec.getboolean("baseline")
        except ValueError as exc:
            raise SchemaError(f"[experiment]: {exc}") from None

    if parser.has_section("network"):
        sec = parser["network"]
        for key in sec:
            if key not in NETWORK_KEYS:
                raise SchemaError(f"[network]: unknown key {key!r}")
            kw[key] = _numbers(sec[key], int)

    if parser.has_section("kernel"):
        sec = parser["kernel"]
        values = dict(KERNEL_KEYS)
        for key in sec:
            if key not in KERNEL_KEYS:
                raise SchemaError(f"[kernel]: unknown key {key!r}")
            values[key] = _numbers(sec[key], float)
        kw["kernel_grid"] = _grid(values)

    seed = kw.get("seed", 0)
    acdl = AcdlConfig(seed=seed)
    if parser.has_section("acdl"):
        acdl = _acdl_fields(parser["acdl"], acdl, "acdl")
    kw["acdl"] = acdl
    kw["acdl_layers"] = {name[5:]: _acdl_fields(parser[name], acdl, name)
                         for name in parser.sections() if name.startswith("acdl.")}
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# features

@dataclass
class Features:
    """Layer datasets with aligned columns (class-grouped) and their fold ids."""

    datasets: dict
    folds: np.ndarray
    class_names: list
    ids: list

    @property
    def labels(self):
        return next(iter(self.datasets.values())).labels


def waveform_digest(waveform):
    h = hashlib.sha256()
    h.update(np.int64(waveform.sample_rate).tobytes())
    h.update(np.ascontiguousarray(waveform.samples, dtype="<f8").tobytes())
    return h.hexdigest()


def _cache_path(cache_dir, weights_hash, wave_hash, tap):
    return Path(cache_dir) / weights_hash[:16] / wave_hash[:24] / f"{tap}.npy"


def featurize(config: ExperimentConfig) -> Features:
    """Run every manifest recording through the network and sum-pool each tap."""
    if config.manifest is None or config.weights is None:
        raise StageError("featurize", "config needs both manifest and weights")
    try:
        manifest = load_manifest(config.manifest)
        chain = config.chain()
        weights = read_weights(config.weights)
        weights.validate(chain)
    except (RawAscError, OSError) as exc:
        raise StageError("featurize", exc) from exc
    taps = list(config.taps)
    # the network shape and epsilon change the maps without changing the weights
    w_hash = hashlib.sha256(f"{weights.digest()}|{chain!r}|{config.epsilon!r}".encode()).hexdigest()

    pooled = {tap: [] for tap in taps}
    for entry in manifest.entries:
        try:
            wave = read_wav(manifest.resolve(entry))
        except (RawAscError, OSError) as exc:
            raise StageError("featurize", f"{entry.path}: {exc}") from exc
        if config.n_samples:
            wave = wave.fit_length(config.n_samples)
        vectors = {}
        if config.cache_dir is not None:
            h = waveform_digest(wave)
            for tap in taps:
                p = _cache_path(config.cache_dir, w_hash, h, tap)
                if p.exists():
                    vectors[tap] = np.load(p)
        missing = [t for t in taps if t not in vectors]
        if missing:
            try:
                maps = forward_with_taps(wave, chain, weights, missing, config.epsilon)
            except RawAscError as exc:
                raise StageError("featurize", f"{entry.path}: {exc}") from exc
            for tap in missing:
                vectors[tap] = global_sum_pool(maps[tap]).values
                if config.cache_dir is not None:
                    p = _cache_path(config.cache_dir, w_hash, h, tap)
                    p.parent.mkdir(parents=True, exist_ok=True)
                    np.save(p, vectors[tap])
        for tap in taps:
            pooled[tap].append(AggregatedEmbedding(vectors[tap], tap, entry.id))

    labels = manifest.labels
    order = np.argsort(labels, kind="stable")
    datasets = {tap: assemble_layer_dataset(pooled[tap], labels, manifest.n_classes) for tap in taps}
    ids = [manifest.entries[i].id for i in order]
    return Features(datasets, np.asarray(manifest.folds)[order], list(manifest.class_names), ids)


# ---------------------------------------------------------------------------
# reports

@dataclass
class LayerReport:
    layer: str
    n_features: int
    d: float
    solo_accuracy: float

    @property
    def compression_ratio(self):
        return 1.0 - self.d / self.n_features

    @property
    def size_ratio(self):
        """The alternative reading: reduced over original dimensionality."""
        return self.d / self.n_features


@dataclass
class ExperimentReport:
    mode: str
    layers: list
    fold_accuracies: dict
    fused_accuracy: float
    pooled_accuracy: float
    baseline_accuracy: float | None
    skipped_folds: list
    traces: dict
    timings: dict

    @property
    def mean_compression(self):
        return float(np.mean([r.compression_ratio for r in self.layers]))

    @property
    def weighted_compression(self):
        return 1.0 - sum(r.d for r in self.layers) / sum(r.n_features for r in self.layers)


def csv_writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def _num(x):
    return repr(float(x))


def _timed(timings, stage, fn, *args, layer=None, **kwargs):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (RawAscError, np.linalg.LinAlgError, OSError) as exc:
        raise StageError(stage, exc, layer) from exc
    finally:
        timings[stage] = timings.get(stage, 0.0) + time.perf_counter() - t0


def run_experiment(config: ExperimentConfig, features: Features | None = None) -> ExperimentReport:
    """Cross-validate the full pipeline and write every report file to ``out_dir``."""
    timings = {}
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if features is None:
        features = _timed(timings, "featurize", featurize, config)
    C = len(features.class_names)

    write_spectra(out / "spectra.csv", features)
    cv = _timed(timings, "cross_validate", cross_validate, features.datasets, features.folds,
                config.pipeline(), C, keep_models=True)
    baseline = None
    if config.baseline:
        if config.mode.kind == "none":
            baseline = cv.mean_accuracy
        else:
            base_cv = _timed(timings, "baseline", cross_validate, features.datasets, features.folds,
                             config.pipeline(DimMode("none")), C)
            baseline = base_cv.mean_accuracy

    layers, traces = [], {}
    for tap, ds in features.datasets.items():
        dims = [f.dims[tap] for f in cv.folds]
        solo = [f.layer_accuracy[tap] for f in cv.folds]
        layers.append(LayerReport(tap, ds.n_features, float(np.mean(dims)) if dims else float("nan"),
                                  float(np.mean(solo)) if solo else float("nan")))
        for f in cv.folds:
            res = f.models[tap].acdl
            if res is not None:
                traces[(tap, f.fold)] = res

    probs = np.full((C, features.labels.size), np.nan)
    for f in cv.folds:
        probs[:, f.test_index] = f.fusion.fused
    scored = ~np.isnan(probs[0])
    pred = np.argmax(np.nan_to_num(probs, nan=-1.0), axis=0)
    truth = features.labels
    pooled = float(np.mean(pred[scored] == truth[scored])) if scored.any() else float("nan")

    report = ExperimentReport(str(config.mode), layers, {f.fold: f.accuracy for f in cv.folds},
                              cv.mean_accuracy, pooled, baseline, cv.skipped, traces, timings)
    _write_report(out, report, cv, features, probs, pred, scored)
    return report


def write_spectra(path, features: Features):
    spectra = {}
    for tap, ds in features.datasets.items():
        try:
            spectra[tap] = singular_spectrum(ds)
        except RawAscError as exc:
            log.warning("layer %s: no spectrum (%s)", tap, exc)
    write_spectra_csv(path, spectra)


def _write_report(out, report, cv, features, probs, pred, scored):
    C = len(features.class_names)
    fh, w = csv_writer(out / "layers.csv")
    with fh:
        w.writerow(["layer", "n_features", "d", "compression_ratio", "size_ratio", "solo_accuracy"])
        for r in report.layers:
            w.writerow([r.layer, r.n_features, _num(r.d), _num(r.compression_ratio),
                        _num(r.size_ratio), _num(r.solo_accuracy)])

    fh, w = csv_writer(out / "folds.csv")
    with fh:
        w.writerow(["fold", "layer", "d", "accuracy"])
        for f in cv.folds:
            for tap, acc in f.layer_accuracy.items():
                w.writerow([f.fold, tap, f.dims[tap], _num(acc)])
            w.writerow([f.fold, "fused", "", _num(f.accuracy)])

    fh, w = csv_writer(out / "summary.csv")
    with fh:
        w.writerow(["metric", "value"])
        w.writerow(["mode", report.mode])
        w.writerow(["fused_accuracy", _num(report.fused_accuracy)])
        w.writerow(["pooled_accuracy", _num(report.pooled_accuracy)])
        if report.baseline_accuracy is not None:
            w.writerow(["baseline_accuracy", _num(report.baseline_accuracy)])
        w.writerow(["mean_compression", _num(report.mean_compression)])
        w.writerow(["weighted_compression", _num(report.weighted_compression)])
        w.writerow(["folds_evaluated", len(cv.folds)])
        w.writerow(["folds_skipped", " ".join(map(str, report.skipped_folds))])

    fh, w = csv_writer(out / "predictions.csv")
    with fh:
        w.writerow(["recording_id", "true_label", "pred_label"] + [f"prob_{c}" for c in range(C)])
        for i in np.flatnonzero(scored):
            w.writerow([features.ids[i], int(features.labels[i]), int(pred[i])]
                       + [_num(p) for p in probs[:, i]])

    confusion = np.zeros((C, C), dtype=int)
    np.add.at(confusion, (features.labels[scored], pred[scored]), 1)
    fh, w = csv_writer(out / "confusion.csv")
    with fh:
        w.writerow(["true\\pred"] + features.class_names)
        for name, row in zip(features.class_names, confusion):
            w.writerow([name] + row.tolist())

    if report.traces:
        (out / "traces").mkdir(exist_ok=True)
        for (tap, fold), res in report.traces.items():
            write_trace_csv(out / "traces" / f"{tap}_fold{fold}.csv", res)

    with open(out / "timings.json", "w", encoding="utf-8") as fh:
        json.dump({k: round(v, 3) for k, v in report.timings.items()}, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# sweeps, dimension selection and export

def sweep_variance_ratios(config: ExperimentConfig, ratios=VARIANCE_RATIOS, features=None):
    """Cross-validated accuracy and mean compression for each explained-variance ratio.

    Writes ``sweep.csv``; a failing ratio is logged and reported as NaN.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if features is None:
        features = featurize(config)
    C = len(features.class_names)
    rows = []
    for ratio in ratios:
        try:
            cv = cross_validate(features.datasets, features.folds,
                                config.pipeline(DimMode("explained_variance", float(ratio))), C)
            comp = [1.0 - f.dims[tap] / ds.n_features
                    for f in cv.folds for tap, ds in features.datasets.items()]
            rows.append((float(ratio), float(np.mean(comp)), cv.mean_accuracy))
        except (RawAscError, np.linalg.LinAlgError) as exc:
            log.error("ratio %s failed: %s", ratio, exc)
            rows.append((float(ratio), float("nan"), float("nan")))
    fh, w = csv_writer(out / "sweep.csv")
    with fh:
        w.writerow(["ratio", "mean_compression", "accuracy"])
        for r in rows:
            w.writerow([_num(v) for v in r])
    return rows


def select_dims(config: ExperimentConfig, features=None, layers=None):
    """Choose each layer's dimensionality on all recordings; writes ``dims.csv``."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if features is None:
        features = featurize(config)
    C = len(features.class_names)
    chosen = {}
    for tap, ds in features.datasets.items():
        if layers and tap not in layers:
            continue
        try:
            d, pca, res = choose_dimension(ds, config.mode, config.acdl_layers.get(tap, config.acdl), C)
        except (RawAscError, np.linalg.LinAlgError) as exc:
            raise StageError("select-dims", exc, tap) from exc
        chosen[tap] = (ds.n_features, d, pca, res)
        if res is not None:
            (out / "traces").mkdir(exist_ok=True)
            write_trace_csv(out / "traces" / f"{tap}_all.csv", res)
    fh, w = csv_writer(out / "dims.csv")
    with fh:
        w.writerow(["layer", "n_features", "d", "compression_ratio"])
        for tap, (n, d, _, _) in chosen.items():
            w.writerow([tap, n, d, _num(1.0 - d / n)])
    return chosen


def export_embeddings(config: ExperimentConfig, layer, stage="raw", features=None, path=None):
    """Write ``recording_id,label,dim_0..`` for one layer, raw or compressed."""
    if stage not in ("raw", "compressed"):
        raise ParameterError(f"unknown export stage {stage!r}")
    if features is None:
        features = featurize(config)
    if layer not in features.datasets:
        raise ParameterError(f"unknown layer {layer!r}; available: {', '.join(features.datasets)}")
    ds = features.datasets[layer]
    Z = ds.Y
    if stage == "compressed":
        _, pca, _ = choose_dimension(ds, config.mode, config.acdl_layers.get(layer, config.acdl),
                                     len(features.class_names))
        if pca is not None:
            Z = pca_transform(pca, ds.Y)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(path) if path else out / f"embeddings_{layer}_{stage}.csv"
    fh, w = csv_writer(path)
    with fh:
        w.writerow(["recording_id", "label"] + [f"dim_{i}" for i in range(Z.shape[0])])
        for j in range(Z.shape[1]):
            w.writerow([features.ids[j], features.class_names[ds.labels[j]]] + [_num(v) for v in Z[:, j]])
    return path


# ---------------------------------------------------------------------------
# trained model files

def save_models(path, models, class_names, fusion="mean"):
    """Store fitted layer models in one ``.npz`` file."""
    arrays = {}
    meta = {"class_names": list(class_names), "fusion": fusion, "layers": []}
    for i, (tap, m) in enumerate(models.items()):
        c = m.classifier
        meta["layers"].append({"layer": tap, "n_features": m.n_features, "d": m.d,
                               "pca": m.transform is not None,
                               "kernel": dataclasses.asdict(c.kernel), "norm": c.norm})
        arrays.update({f"{i}_support": c.support, f"{i}_coef": c.coef, f"{i}_bias": c.bias,
                       f"{i}_center": c.center})
        if m.transform is not None:
            arrays.update({f"{i}_mean": m.transform.mean, f"{i}_components": m.transform.components,
                           f"{i}_singular": m.transform.singular_values})
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_models(path):
    """Inverse of :func:`save_models`: ``(models, class_names, fusion)``."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        models = {}
        C = len(meta["class_names"])
        for i, info in enumerate(meta["layers"]):
            pca = None
            if info["pca"]:
                pca = PcaModel(z[f"{i}_mean"], z[f"{i}_components"], z[f"{i}_singular"])
            clf = LayerClassifier(z[f"{i}_support"], z[f"{i}_coef"], z[f"{i}_bias"],
                                  KernelParams(**info["kernel"]), info["layer"], C,
                                  z[f"{i}_center"], info["norm"])
            models[info["layer"]] = LayerModel(info["layer"], info["n_features"], info["d"], pca, clf)
    return models, meta["class_names"], meta["fusion"]


def train_models(config: ExperimentConfig, features=None, exclude_fold=None):
    """Fit the pipeline on every recording (or all but one fold)."""
    if features is None:
        features = featurize(config)
    keep = np.ones(features.labels.size, dtype=bool)
    if exclude_fold is not None:
        keep = features.folds != exclude_fold
    sets = {tap: LayerDataset(ds.Y[:, keep], ds.labels[keep], tap) for tap, ds in features.datasets.items()}
    try:
        return fit_pipeline(sets, config.pipeline(), len(features.class_names))
    except (RawAscError, np.linalg.LinAlgError) as exc:
        raise StageError("train", exc) from exc


def evaluate_models(models, features: Features, fusion="mean", fold=None, path=None):
    """Predict with saved models; optionally only one fold. Returns accuracy."""
    sel = np.ones(features.labels.size, dtype=bool) if fold is None else features.folds == fold
    missing = [t for t in models if t not in features.datasets]
    if missing:
        raise StageError("evaluate", f"model layers not featurized: {', '.join(missing)}")
    truth = features.labels[sel]
    result = predict_pipeline(models, {t: features.datasets[t].Y[:, sel] for t in models}, fusion, truth)
    if path is not None:
        fh, w = csv_writer(path)
        with fh:
            C = result.fused.shape[0]
            w.writerow(["recording_id", "true_label", "pred_label"] + [f"prob_{c}" for c in range(C)])
            for j, i in enumerate(np.flatnonzero(sel)):
                w.writerow([features.ids[i], int(truth[j]), int(result.predictions[j])]
                           + [_num(p) for p in result.fused[:, j]])
    return result.accuracy

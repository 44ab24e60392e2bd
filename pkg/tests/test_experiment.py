import csv

import numpy as np
import pytest

from rawasc.ensemble import DimMode, KernelParams
from rawasc.errors import ParameterError, SchemaError, StageError
from rawasc.experiment import (VARIANCE_RATIOS, ExperimentConfig, evaluate_models, export_embeddings,
                               featurize, load_config, load_models, run_experiment, save_models,
                               select_dims, sweep_variance_ratios, train_models)

ONE_KERNEL = [KernelParams(2, 1.0, 1.0, 1e-2)]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def base(demo_config):
    return load_config(demo_config).replace(kernel_grid=ONE_KERNEL)


@pytest.fixture(scope="module")
def features(base):
    return featurize(base)


class TestConfig:
    def test_demo_config(self, demo_config):
        cfg = load_config(demo_config)
        assert cfg.manifest == demo_config.parent / "manifest.tsv"
        assert cfg.taps == ("conv1", "conv2", "conv3")
        assert cfg.mode == DimMode("acdl")
        assert cfg.filters == (16, 32, 64)
        assert cfg.acdl.seed == cfg.seed == 3
        assert cfg.acdl.initial_atoms_per_class == 8
        assert len(cfg.kernel_grid) == 12

    def test_sections_and_overrides(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[experiment]\nmode = fixed(8)\nseed = 5\nfusion = geometric\n"
                     "[kernel]\ndegree = 3\ncoef0 = 1\nregularization = 0.1\n"
                     "[acdl]\nlambda = 0.2\nnormalize_columns = no\n[acdl.conv7]\ntau = 0.7\n")
        cfg = load_config(p)
        assert cfg.mode == DimMode("fixed", 8)
        assert cfg.kernel_grid == [KernelParams(3, 1.0, 1.0, 0.1)]
        assert cfg.acdl.lam == 0.2 and cfg.acdl.normalize_columns is False and cfg.acdl.seed == 5
        assert cfg.acdl_layers["conv7"].tau == 0.7
        assert cfg.acdl_layers["conv7"].lam == 0.2
        assert cfg.pipeline().acdl_for("conv7").tau == 0.7

    @pytest.mark.parametrize("text", [
        "[experiment]\ncolour = red\n", "[extra]\na = 1\n", "[acdl]\nrho = 1\n",
        "[network]\nfilters = a, b\n", "[experiment]\nseed = x\n", "no section\n"])
    def test_schema_errors(self, tmp_path, text):
        (tmp_path / "c.ini").write_text(text)
        with pytest.raises(SchemaError):
            load_config(tmp_path / "c.ini")

    def test_invalid_values(self, tmp_path):
        (tmp_path / "c.ini").write_text("[experiment]\nmode = pca\n")
        with pytest.raises(SchemaError, match="unknown dimension mode"):
            load_config(tmp_path / "c.ini")
        with pytest.raises(ParameterError):
            ExperimentConfig(taps=())

    def test_replace_reseeds_acdl(self, base):
        cfg = base.replace(seed=11)
        assert cfg.acdl.seed == 11 and base.acdl.seed == 3


class TestFeaturize:
    def test_shapes_and_order(self, features):
        assert [ds.n_features for ds in features.datasets.values()] == [16, 32, 64]
        assert features.class_names == ["scene0", "scene1", "scene2"]
        np.testing.assert_array_equal(features.labels, np.repeat([0, 1, 2], 8))
        assert features.ids[0] == "audio/c0_000.wav"
        for ds in features.datasets.values():
            assert ds.ids == features.ids
            assert np.all(ds.Y >= 0)  # post-ReLU taps

    def test_cache_matches_cold_run(self, base, features, tmp_path):
        cold = featurize(base.replace(cache_dir=None))
        cached = featurize(base)
        for tap in features.datasets:
            assert cold.datasets[tap].Y.tobytes() == cached.datasets[tap].Y.tobytes()
        assert len(list(base.cache_dir.rglob("*.npy"))) == 24 * 3

    def test_cache_keyed_on_epsilon(self, base, tmp_path):
        cfg = base.replace(cache_dir=tmp_path / "c", taps=("p-conv1",))
        a = featurize(cfg)
        b = featurize(cfg.replace(epsilon=1.0))
        assert len(list((tmp_path / "c").rglob("*.npy"))) == 2 * 24
        assert not np.array_equal(a.datasets["p-conv1"].Y, b.datasets["p-conv1"].Y)

    def test_missing_inputs(self, tmp_path):
        with pytest.raises(StageError, match="featurize"):
            featurize(ExperimentConfig())
        with pytest.raises(StageError, match="featurize"):
            featurize(ExperimentConfig(manifest=tmp_path / "none.tsv", weights=tmp_path / "w.snd"))


class TestRunExperiment:
    def test_mode_none(self, base, features, tmp_path):
        rep = run_experiment(base.replace(mode=DimMode("none"), out_dir=tmp_path), features)
        assert all(r.d == r.n_features and r.compression_ratio == 0 for r in rep.layers)
        assert rep.baseline_accuracy == rep.fused_accuracy

    def test_fixed_mode_and_outputs(self, base, features, tmp_path):
        rep = run_experiment(base.replace(mode=DimMode.parse("fixed(8)"), out_dir=tmp_path), features)
        assert [r.d for r in rep.layers] == [8, 8, 8]
        np.testing.assert_allclose([r.compression_ratio for r in rep.layers], [0.5, 0.75, 0.875])
        np.testing.assert_allclose(rep.mean_compression, np.mean([0.5, 0.75, 0.875]))
        np.testing.assert_allclose(rep.weighted_compression, 1 - 24 / 112)
        for name in ("spectra.csv", "layers.csv", "folds.csv", "summary.csv", "predictions.csv",
                     "confusion.csv", "timings.json"):
            assert (tmp_path / name).exists()
        assert _rows(tmp_path / "layers.csv")[0] == ["layer", "n_features", "d", "compression_ratio",
                                                     "size_ratio", "solo_accuracy"]

    def test_report_recomputable_from_predictions(self, base, features, tmp_path):
        rep = run_experiment(base.replace(mode=DimMode.parse("fixed:4"), out_dir=tmp_path), features)
        rows = _rows(tmp_path / "predictions.csv")
        assert rows[0] == ["recording_id", "true_label", "pred_label", "prob_0", "prob_1", "prob_2"]
        body = rows[1:]
        assert len(body) == 24
        correct = [r[1] == r[2] for r in body]
        assert rep.pooled_accuracy == np.mean(correct)
        fold_of = dict(zip(features.ids, features.folds))
        per_fold = {}
        for r, ok in zip(body, correct):
            per_fold.setdefault(fold_of[r[0]], []).append(ok)
        assert rep.fused_accuracy == np.mean([np.mean(v) for v in per_fold.values()])
        for r in body:
            probs = np.array(r[3:], dtype=float)
            assert abs(probs.sum() - 1) < 1e-9 and int(r[2]) == int(np.argmax(probs))
        confusion = np.array([row[1:] for row in _rows(tmp_path / "confusion.csv")[1:]], dtype=int)
        assert confusion.sum() == 24 and np.trace(confusion) == sum(correct)

    def test_acdl_mode_traces(self, base, features, tmp_path):
        rep = run_experiment(base.replace(out_dir=tmp_path, baseline=False), features)
        assert rep.baseline_accuracy is None
        traces = sorted(p.name for p in (tmp_path / "traces").iterdir())
        assert traces == sorted(f"{t}_fold{f}.csv" for t in base.taps for f in (1, 2, 3, 4))
        for r in rep.layers:
            assert 3 <= r.d <= min(r.n_features, 18)

    def test_stage_error(self, base, tmp_path):
        cfg = base.replace(out_dir=tmp_path, weights=tmp_path / "missing.snd")
        with pytest.raises(StageError, match=r"\[featurize\]"):
            run_experiment(cfg)


class TestSweep:
    def test_seven_ratios(self, base, features, tmp_path):
        rows = sweep_variance_ratios(base.replace(out_dir=tmp_path), VARIANCE_RATIOS, features)
        assert [r[0] for r in rows] == list(VARIANCE_RATIOS)
        comps = [r[1] for r in rows]
        assert all(b >= a for a, b in zip(comps, comps[1:]))
        table = _rows(tmp_path / "sweep.csv")
        assert table[0] == ["ratio", "mean_compression", "accuracy"] and len(table) == 8

    def test_full_ratio_equals_baseline(self, base, features, tmp_path):
        # conv1 has 16 features and 18 training columns, so ratio 1 keeps every dimension
        cfg = base.replace(out_dir=tmp_path, taps=("conv1",), mode=DimMode("none"))
        sub = type(features)({"conv1": features.datasets["conv1"]}, features.folds,
                             features.class_names, features.ids)
        (ratio, comp, acc), = sweep_variance_ratios(cfg, [1.0], sub)
        assert comp == 0.0
        assert acc == run_experiment(cfg, sub).fused_accuracy


class TestDimsExportModels:
    def test_select_dims(self, base, features, tmp_path):
        out = select_dims(base.replace(out_dir=tmp_path, mode=DimMode("explained_variance", 0.9)), features)
        rows = _rows(tmp_path / "dims.csv")
        assert rows[0] == ["layer", "n_features", "d", "compression_ratio"]
        for row in rows[1:]:
            n, d = out[row[0]][:2]
            assert float(row[3]) == 1 - d / n

    def test_export_shapes(self, base, features, tmp_path):
        cfg = base.replace(out_dir=tmp_path, mode=DimMode("fixed", 5))
        raw = _rows(export_embeddings(cfg, "conv3", "raw", features))
        comp = _rows(export_embeddings(cfg, "conv3", "compressed", features))
        assert raw[0][:3] == ["recording_id", "label", "dim_0"]
        assert len(raw[0]) == 2 + 64 and len(comp[0]) == 2 + 5
        assert len(raw) == len(comp) == 25
        assert raw[1][1] == "scene0"

    def test_export_errors(self, base, features, tmp_path):
        with pytest.raises(ParameterError):
            export_embeddings(base.replace(out_dir=tmp_path), "conv9", "raw", features)
        with pytest.raises(ParameterError):
            export_embeddings(base.replace(out_dir=tmp_path), "conv3", "pooled", features)

    def test_models_round_trip(self, base, features, tmp_path):
        cfg = base.replace(out_dir=tmp_path, mode=DimMode("fixed", 6))
        models = train_models(cfg, features, exclude_fold=2)
        save_models(tmp_path / "m.npz", models, features.class_names, "mean")
        loaded, names, fusion = load_models(tmp_path / "m.npz")
        assert names == features.class_names and fusion == "mean"
        a = evaluate_models(models, features, fold=2, path=tmp_path / "a.csv")
        b = evaluate_models(loaded, features, fold=2, path=tmp_path / "b.csv")
        assert a == b
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert len(_rows(tmp_path / "a.csv")) == 1 + 6

"""Command-line entry point (``rawasc``)."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .ensemble import DimMode
from .errors import RawAscError, StageError

log = logging.getLogger("rawasc")


def _config_help():
    lines = ["config file keys ([experiment] section):"]
    lines += [f"  {k:<12} {v}" for k, v in ex.EXPERIMENT_KEYS.items()]
    lines += [
        "[network]: filters, kernels, strides, pools (default SoundNet: "
        "16..1024 filters, kernels 64,32,16,8,4,4,4, stride 2, pools 8,8,0,0,4,0,0)",
        "[kernel]: degree (2,3), coef0 (0,1), regularization (1e-3,1e-2,1e-1), scale (1)",
        "[acdl] and [acdl.<layer>]: gamma (1), lambda (0.1), tau (0.5), stop_recon_error (0.01),",
        "  max_outer_iters (200), initial_atoms_per_class (16), normalize_columns (yes),",
        "  inner_iters (100), prune_tolerance (0.2), seed (experiment seed)",
    ]
    return "\n".join(lines)


def _common(p):
    p.add_argument("--config", type=Path, help="experiment INI file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", type=Path, help="override the output directory")
    p.add_argument("--mode", help="none | fixed:<d> | explained_variance:<r> | acdl")
    p.add_argument("--layers", help="comma-separated taps overriding the config")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rawasc", description="Raw-audio scene classification with compact layer embeddings.",
        epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=_config_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p)
        return p

    add("featurize", "compute (and cache) pooled tap embeddings; writes features.csv and spectra.csv")
    add("select-dims", "choose each layer's dimensionality on all recordings; writes dims.csv")
    p = add("train", "fit the pipeline and save it to a model file")
    p.add_argument("--model", type=Path, help="output model file (default <out-dir>/model.npz)")
    p.add_argument("--exclude-fold", type=int, help="leave this fold out of training")
    p = add("evaluate", "cross-validated report, or score a saved model with --model")
    p.add_argument("--model", type=Path, help="saved model to score instead of cross-validating")
    p.add_argument("--fold", type=int, help="with --model: score only this fold")
    p = add("sweep", "explained-variance sweep; writes sweep.csv")
    p.add_argument("--ratios", default=",".join(f"{r:g}" for r in ex.VARIANCE_RATIOS),
                   help="comma-separated ratios in (0, 1] (default %(default)s)")
    p = add("export", "export one layer's embeddings as CSV")
    p.add_argument("--layer", required=True, help="tap to export")
    p.add_argument("--stage", choices=("raw", "compressed"), default="raw",
                   help="raw pooled vectors or compressed embeddings (default raw)")
    p = add("demo", "write a small synthetic corpus, weights and config to --out-dir")
    p.add_argument("--per-class", type=int, default=20, help="recordings per class (default 20)")
    p.add_argument("--classes", type=int, default=4, help="number of classes (default 4)")
    return parser


def _load(args):
    if args.config is None:
        raise StageError("config", "--config is required for this command")
    try:
        cfg = ex.load_config(args.config)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.out_dir is not None:
            changes["out_dir"] = args.out_dir
        if args.mode is not None:
            changes["mode"] = DimMode.parse(args.mode)
        if args.layers:
            changes["taps"] = tuple(t.strip() for t in args.layers.split(",") if t.strip())
        return cfg.replace(**changes) if changes else cfg
    except (RawAscError, OSError) as exc:
        raise StageError("config", exc) from exc


def run(args):
    if args.command == "demo":
        from .synthetic import write_demo_corpus
        root = args.out_dir or Path("demo")
        path = write_demo_corpus(root, seed=args.seed or 0, n_classes=args.classes,
                                 per_class=args.per_class)
        print(path)
        return

    cfg = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "featurize":
        feats = ex.featurize(cfg)
        fh, w = ex.csv_writer(out / "features.csv")
        with fh:
            w.writerow(["layer", "n_features", "n_recordings"])
            for tap, ds in feats.datasets.items():
                w.writerow([tap, ds.n_features, ds.n_samples])
        ex.write_spectra(out / "spectra.csv", feats)
        print(f"featurized {len(feats.ids)} recordings at {len(feats.datasets)} taps")
    elif args.command == "select-dims":
        for tap, (n, d, _, _) in ex.select_dims(cfg).items():
            print(f"{tap}\tn={n}\td={d}\tcompression={1 - d / n:.4f}")
    elif args.command == "train":
        feats = ex.featurize(cfg)
        models = ex.train_models(cfg, feats, args.exclude_fold)
        path = args.model or out / "model.npz"
        ex.save_models(path, models, feats.class_names, cfg.fusion)
        print(path)
    elif args.command == "evaluate":
        if args.model is not None:
            models, names, fusion = ex.load_models(args.model)
            feats = ex.featurize(cfg.replace(taps=tuple(models)))
            if names != feats.class_names:
                raise StageError("evaluate", "model classes differ from the manifest classes")
            acc = ex.evaluate_models(models, feats, fusion, args.fold, out / "predictions.csv")
            print(f"accuracy {acc:.4f}")
        else:
            rep = ex.run_experiment(cfg)
            for r in rep.layers:
                print(f"{r.layer}\tn={r.n_features}\td={r.d:g}\tcompression={r.compression_ratio:.4f}"
                      f"\taccuracy={r.solo_accuracy:.4f}")
            print(f"fused accuracy {rep.fused_accuracy:.4f}")
            if rep.baseline_accuracy is not None:
                print(f"baseline accuracy {rep.baseline_accuracy:.4f}")
    elif args.command == "sweep":
        try:
            ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
        except ValueError:
            raise StageError("sweep", f"bad ratio list {args.ratios!r}") from None
        for ratio, comp, acc in ex.sweep_variance_ratios(cfg, ratios):
            print(f"{ratio:g}\tcompression={comp:.4f}\taccuracy={acc:.4f}")
    elif args.command == "export":
        print(ex.export_embeddings(cfg, args.layer, args.stage))


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except StageError as exc:
        print(f"rawasc: error: {exc}", file=sys.stderr)
        return 1
    except (RawAscError, OSError, np.linalg.LinAlgError) as exc:
        print(f"rawasc: error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

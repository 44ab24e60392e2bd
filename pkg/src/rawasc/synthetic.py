"""Seeded synthetic data for tests, benchmarks and the demo corpus."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .acdl import AcdlConfig
from .audio import Waveform, write_manifest, write_wav
from .convnet import (BN_PARAMS, NetworkWeights, conv_block_chain, forward_with_taps,
                      write_weights)
from .embed import LayerDataset
from .errors import ParameterError

TINY_FILTERS = (16, 32, 64)
TINY_KERNELS = (32, 16, 8)
TINY_STRIDES = (2, 2, 2)
TINY_POOLS = (4, 4, 0)
TINY_TAPS = ("conv1", "conv2", "conv3")

# Archetype data lives on offset simplices inside each class subspace; unit
# column normalization would bend those patches onto a sphere.
BENCHMARK_ACDL = AcdlConfig(tau=0.5, initial_atoms_per_class=16, normalize_columns=False)


def regular_simplex(k):
    """``k + 1`` unit-norm vertices of a regular simplex centred at 0 in R^k, as columns."""
    if k < 1:
        raise ParameterError("simplex dimension must be >= 1")
    E = np.eye(k + 1) - 1.0 / (k + 1)
    # orthonormal basis of the sum-zero hyperplane
    U, _, _ = np.linalg.svd(E)
    V = U[:, :k].T @ E
    return V / np.linalg.norm(V, axis=0)


def _orthonormal(rng, n, k):
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return Q


def archetype_codes(rng, n_classes, subspace_dim, per_class, offset, concentration):
    """Latent class data: Dirichlet mixtures of a rotated, shifted simplex per class.

    Returns ``(X, labels)`` with ``X`` of shape ``(n_classes * subspace_dim, M)``
    where class ``c`` occupies its own block of ``subspace_dim`` rows.
    """
    k = subspace_dim
    base = regular_simplex(k)
    X = np.zeros((n_classes * k, n_classes * per_class))
    for c in range(n_classes):
        R = _orthonormal(rng, k, k)
        u = rng.standard_normal(k)
        vertices = offset * (u / np.linalg.norm(u))[:, None] + R @ base
        mix = rng.dirichlet(concentration * np.ones(k + 1), size=per_class).T
        X[c * k:(c + 1) * k, c * per_class:(c + 1) * per_class] = vertices @ mix
    return X, np.repeat(np.arange(n_classes), per_class)


def _add_noise(rng, Y, noise):
    # noise level is relative to the RMS of the clean signal
    return Y + noise * np.sqrt(np.mean(Y ** 2)) * rng.standard_normal(Y.shape)


def subspace_benchmark(seed=0, n_features=64, n_classes=4, subspace_dim=3, per_class=50,
                       noise=0.01, offset=3.0, concentration=0.3) -> LayerDataset:
    """Classes on disjoint ``subspace_dim``-dimensional subspaces of R^n_features."""
    if n_classes * subspace_dim > n_features:
        raise ParameterError("class subspaces do not fit in the ambient dimension")
    rng = np.random.default_rng(seed)
    X, labels = archetype_codes(rng, n_classes, subspace_dim, per_class, offset, concentration)
    B = _orthonormal(rng, n_features, n_classes * subspace_dim)
    return LayerDataset(_add_noise(rng, B @ X, noise), labels, "benchmark")


def depth_redundant_layers(seed=0, widths=(32, 128, 512), n_classes=4, subspace_dim=3,
                           per_class=50, noise=0.01, offset=3.0, concentration=0.3):
    """Layers of growing width that all carry the same latent class data.

    Returns ``{"tap<i>": LayerDataset}``; deeper taps are wider but have the
    same intrinsic dimensionality, so they are more redundant.
    """
    rng = np.random.default_rng(seed)
    X, labels = archetype_codes(rng, n_classes, subspace_dim, per_class, offset, concentration)
    out = {}
    for i, n in enumerate(widths):
        if n < X.shape[0]:
            raise ParameterError(f"width {n} below intrinsic dimension {X.shape[0]}")
        B = _orthonormal(rng, n, X.shape[0])
        name = f"tap{i}"
        out[name] = LayerDataset(_add_noise(rng, B @ X, noise), labels, name)
    return out


def low_rank_data(seed=0, n_features=64, rank=5, n_samples=200, noise=1e-3):
    """Columns near a random ``rank``-dimensional subspace, absolute noise ``noise``."""
    rng = np.random.default_rng(seed)
    B = _orthonormal(rng, n_features, rank)
    Y = B @ rng.standard_normal((rank, n_samples))
    return Y + noise * rng.standard_normal(Y.shape)


# ---------------------------------------------------------------------------
# audio

def scene_waveforms(seed=0, n_classes=4, per_class=20, n_samples=4096, sample_rate=8000,
                    amplitude=40.0, snr=4.0):
    """Class-specific noisy tone mixtures in the [-256, 256] sample range.

    Each class owns two partial frequencies and a noise bandwidth; recordings
    jitter pitch, phase and gain.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / sample_rate
    nyquist = sample_rate / 2
    freqs = rng.uniform(0.03, 0.4, size=(n_classes, 2)) * nyquist
    smooth = rng.integers(1, 8, size=n_classes)
    waves, labels = [], []
    for c in range(n_classes):
        for i in range(per_class):
            f = freqs[c] * (1.0 + 0.02 * rng.standard_normal(2))
            phase = rng.uniform(0, 2 * np.pi, size=2)
            gain = amplitude * rng.uniform(0.7, 1.3)
            x = gain * (np.sin(2 * np.pi * f[0] * t + phase[0])
                        + 0.5 * np.sin(2 * np.pi * f[1] * t + phase[1]))
            n = rng.standard_normal(n_samples + smooth[c] - 1)
            n = np.convolve(n, np.ones(smooth[c]) / np.sqrt(smooth[c]), mode="valid")
            x = x + gain / snr * n
            waves.append(Waveform(np.clip(x, -255.0, 255.0), sample_rate, f"c{c}_{i:03d}"))
            labels.append(c)
    return waves, np.array(labels)


def tiny_chain():
    """Three conv blocks small enough for desk-scale tests."""
    return conv_block_chain(TINY_FILTERS, TINY_KERNELS, TINY_STRIDES, TINY_POOLS)


def random_network(chain, seed=0, calibration=(), epsilon=1e-5):
    """He-initialized conv weights; batchnorm statistics estimated on ``calibration``.

    Without calibration waveforms the batchnorm layers are identities
    (mean 0, variance 1).
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    c = 1
    prev_conv = None
    for layer in chain:
        if layer.kind == "conv":
            fan_in = c * layer.kernel_width
            tensors[f"{layer.name}.weight"] = rng.standard_normal(
                (layer.filters, c, layer.kernel_width)) * np.sqrt(2.0 / fan_in)
            tensors[f"{layer.name}.bias"] = np.zeros(layer.filters)
            c = layer.filters
            prev_conv = layer.name
        elif layer.kind == "batchnorm":
            mean, var = np.zeros(c), np.ones(c)
            if len(calibration):
                sub = chain[:chain.index(layer)]
                weights = NetworkWeights(tensors)
                maps = [forward_with_taps(w, sub, weights, [prev_conv], epsilon)[prev_conv].values
                        for w in calibration]
                stacked = np.concatenate(maps, axis=1)
                mean = stacked.mean(axis=1)
                var = np.maximum(stacked.var(axis=1), 1e-6)
            tensors.update({f"{layer.name}.{p}": v for p, v in
                            zip(BN_PARAMS, (np.ones(c), np.zeros(c), mean, var))})
    # round through float32 so in-memory and on-disk weights agree exactly
    return NetworkWeights({k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()})


def write_demo_corpus(root, seed=0, n_classes=4, per_class=20, n_folds=4, n_samples=4096,
                      sample_rate=8000, snr=0.5):
    """Write WAVs, a manifest, tiny-network weights and a config file under ``root``.

    Folds are assigned round-robin within each class. The default ``snr`` is
    low enough that the classes overlap and accuracy is not saturated.
    Returns the config path.
    """
    root = Path(root)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    waves, labels = scene_waveforms(seed, n_classes, per_class, n_samples, sample_rate, snr=snr)
    names = [f"scene{c}" for c in range(n_classes)]
    rows, seen = [], np.zeros(n_classes, dtype=int)
    for w, y in zip(waves, labels):
        rel = f"audio/{w.id}.wav"
        write_wav(root / rel, w)
        rows.append((rel, names[y], int(seen[y] % n_folds) + 1))
        seen[y] += 1
    write_manifest(root / "manifest.tsv", rows, names)

    chain = tiny_chain()
    calib = [w for w in waves if w.id.endswith("_000")]
    write_weights(root / "tiny.snd", random_network(chain, seed, calib))
    config = root / "experiment.ini"
    config.write_text(
        "[experiment]\n"
        "manifest = manifest.tsv\n"
        "weights = tiny.snd\n"
        f"taps = {', '.join(TINY_TAPS)}\n"
        "mode = acdl\n"
        "baseline = yes\n"
        "out_dir = results\n"
        "cache_dir = cache\n"
        f"seed = {seed}\n"
        f"n_samples = {n_samples}\n"
        "\n[network]\n"
        f"filters = {', '.join(map(str, TINY_FILTERS))}\n"
        f"kernels = {', '.join(map(str, TINY_KERNELS))}\n"
        f"strides = {', '.join(map(str, TINY_STRIDES))}\n"
        f"pools = {', '.join(map(str, TINY_POOLS))}\n"
        "\n[acdl]\n"
        "initial_atoms_per_class = 8\n"
        "stop_recon_error = 0.05\n"
    )
    return config

"""Inference-only 1-D CNN with named taps and global sum pooling.

Layers form a flat chain. A conv block ``X`` expands to four entries:
``convX.lin`` (convolution), ``p-convX`` (batchnorm, the pre-ReLU tap),
``convX`` (ReLU, the post-activation tap) and optionally ``poolX``.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, FormatError, ParameterError

KINDS = ("conv", "batchnorm", "relu", "maxpool")
BN_PARAMS = ("scale", "shift", "mean", "var")
DEFAULT_EPSILON = 1e-5

SOUNDNET_FILTERS = (16, 32, 64, 128, 256, 512, 1024)
SOUNDNET_KERNELS = (64, 32, 16, 8, 4, 4, 4)
SOUNDNET_STRIDES = (2, 2, 2, 2, 2, 2, 2)
SOUNDNET_POOLS = (8, 8, 0, 0, 4, 0, 0)
SOUNDNET_TAPS = tuple(f"{p}conv{i}" for i in range(3, 8) for p in ("p-", ""))


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    filters: int
    kernel_width: int = 1
    stride: int = 1
    pool_width: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"layer {self.name}: unknown kind {self.kind!r}")
        if self.filters < 1 or self.kernel_width < 1 or self.stride < 1 or self.pool_width < 1:
            raise ParameterError(f"layer {self.name}: sizes and stride must be >= 1")

    def out_width(self, width):
        if self.kind == "conv":
            span = self.kernel_width
        elif self.kind == "maxpool":
            span = self.pool_width
        else:
            return width
        if width < span:
            raise DimensionError(f"layer {self.name}: input width {width} shorter than window {span}")
        return (width - span) // self.stride + 1


def conv_block_chain(filters, kernels, strides, pools, first_index=1):
    """Expand per-block geometry into a LayerSpec chain.

    ``pools[i] == 0`` means no pooling after block i; pooling stride equals
    its width.
    """
    if not (len(filters) == len(kernels) == len(strides) == len(pools)):
        raise ParameterError("filters, kernels, strides and pools must have equal length")
    chain = []
    for i, (n, k, s, p) in enumerate(zip(filters, kernels, strides, pools), start=first_index):
        chain.append(LayerSpec(f"conv{i}.lin", "conv", n, kernel_width=k, stride=s))
        chain.append(LayerSpec(f"p-conv{i}", "batchnorm", n))
        chain.append(LayerSpec(f"conv{i}", "relu", n))
        if p:
            chain.append(LayerSpec(f"pool{i}", "maxpool", n, stride=p, pool_width=p))
    validate_chain(chain)
    return chain


def soundnet_chain():
    """The 7 conv blocks of the SoundNet-8 trunk (valid padding)."""
    return conv_block_chain(SOUNDNET_FILTERS, SOUNDNET_KERNELS, SOUNDNET_STRIDES, SOUNDNET_POOLS)


def validate_chain(chain):
    names = [layer.name for layer in chain]
    if len(set(names)) != len(names):
        raise ParameterError("layer names must be unique")


def tap_widths(chain, n_samples):
    """Closed-form output width of every layer for an input of ``n_samples``."""
    widths = {}
    width = n_samples
    for layer in chain:
        width = layer.out_width(width)
        widths[layer.name] = width
    return widths


def layer_channels(chain, in_channels=1):
    channels = {}
    c = in_channels
    for layer in chain:
        if layer.kind == "conv":
            c = layer.filters
        channels[layer.name] = c
    return channels


# ---------------------------------------------------------------------------
# primitives

def conv1d(x, kernel, bias, stride=1):
    """Valid cross-correlation of ``x`` (n_in, s) with ``kernel`` (n_out, n_in, k)."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if kernel.ndim == 1:
        kernel = kernel[None, None, :]
    bias = np.broadcast_to(np.asarray(bias, dtype=np.float64), (kernel.shape[0],))
    n_out, n_in, k = kernel.shape
    if x.shape[0] != n_in:
        raise DimensionError(f"kernel expects {n_in} input channels, got {x.shape[0]}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if x.shape[1] < k:
        raise DimensionError(f"input length {x.shape[1]} shorter than kernel width {k}")
    windows = sliding_window_view(x, k, axis=1)[:, ::stride, :]
    return np.tensordot(kernel, windows, axes=([1, 2], [0, 2])) + bias[:, None]


def batchnorm_infer(x, scale, shift, mean, var, epsilon=DEFAULT_EPSILON):
    x = np.asarray(x, dtype=np.float64)
    params = [np.asarray(p, dtype=np.float64).reshape(-1) for p in (scale, shift, mean, var)]
    if any(p.size != x.shape[0] for p in params):
        raise DimensionError(f"batchnorm parameters must have {x.shape[0]} entries")
    scale, shift, mean, var = params
    if np.any(var <= 0):
        raise ParameterError("batchnorm running variance must be positive")
    gain = scale / np.sqrt(var + epsilon)
    return (x - mean[:, None]) * gain[:, None] + shift[:, None]


def maxpool1d(x, width, stride=None):
    stride = width if stride is None else stride
    if x.shape[1] < width:
        raise DimensionError(f"input length {x.shape[1]} shorter than pool width {width}")
    return sliding_window_view(x, width, axis=1)[:, ::stride, :].max(axis=2)


# ---------------------------------------------------------------------------
# weights

class NetworkWeights:
    """Read-only mapping ``"<layer>.<param>" -> float64 array``.

    Conv layers own ``weight`` (n_out, n_in, k) and ``bias``; batchnorm layers
    own ``scale``, ``shift``, ``mean``, ``var``.
    """

    def __init__(self, tensors):
        self._tensors = {}
        for name, value in tensors.items():
            arr = np.array(value, dtype=np.float64)
            arr.setflags(write=False)
            self._tensors[name] = arr

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def items(self):
        return self._tensors.items()

    def __len__(self):
        return len(self._tensors)

    def digest(self):
        h = hashlib.sha256()
        for name in sorted(self._tensors):
            arr = self._tensors[name]
            h.update(name.encode())
            h.update(np.asarray(arr.shape, dtype="<u4").tobytes())
            h.update(arr.astype("<f4").tobytes())
        return h.hexdigest()

    def validate(self, chain, in_channels=1):
        """Check every tensor needed by ``chain`` is present with the right shape."""
        c = in_channels
        for layer in chain:
            if layer.kind == "conv":
                expected = {"weight": (layer.filters, c, layer.kernel_width), "bias": (layer.filters,)}
                c = layer.filters
            elif layer.kind == "batchnorm":
                if layer.filters != c:
                    raise DimensionError(f"layer {layer.name}: expects {layer.filters} channels, chain has {c}")
                expected = {p: (c,) for p in BN_PARAMS}
            else:
                continue
            for param, shape in expected.items():
                key = f"{layer.name}.{param}"
                if key not in self._tensors:
                    raise FormatError(f"weights missing tensor {key}")
                if self._tensors[key].shape != shape:
                    raise DimensionError(f"tensor {key} has shape {self._tensors[key].shape}, expected {shape}")
            if layer.kind == "batchnorm" and np.any(self._tensors[f"{layer.name}.var"] <= 0):
                raise ParameterError(f"layer {layer.name}: running variance must be positive")


MAGIC = b"SND1"


def write_weights(path, weights):
    """Serialize tensors to the little-endian ``SND1`` container (float32 payload)."""
    items = list(weights.items())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(items)))
        for name, arr in items:
            arr = np.asarray(arr)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_weights(path) -> NetworkWeights:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not an SND1 weight file")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError(f"{path}: truncated weight file")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<H")
        if pos + name_len > len(data):
            raise FormatError(f"{path}: truncated weight file")
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<B")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        if pos + 4 * n > len(data):
            raise FormatError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims)
        pos += 4 * n
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return NetworkWeights(tensors)


# ---------------------------------------------------------------------------
# forward pass

@dataclass(frozen=True)
class FeatureMapMatrix:
    values: np.ndarray
    layer: str


@dataclass(frozen=True)
class AggregatedEmbedding:
    values: np.ndarray
    layer: str
    recording_id: str = ""


def forward_with_taps(waveform, chain, weights, taps, epsilon=DEFAULT_EPSILON, in_channels=1):
    """Run the chain once, returning ``{tap: FeatureMapMatrix}`` for each requested tap.

    ``waveform`` is a :class:`~rawasc.audio.Waveform` or a 1-D array.
    """
    samples = getattr(waveform, "samples", waveform)
    x = np.asarray(samples, dtype=np.float64).reshape(in_channels, -1)
    names = [layer.name for layer in chain]
    unknown = [t for t in taps if t not in names]
    if unknown:
        raise ParameterError(f"unknown taps: {', '.join(unknown)}")
    wanted = set(taps)
    last = max(names.index(t) for t in taps) if taps else -1

    out = {}
    for i, layer in enumerate(chain[:last + 1]):
        try:
            if layer.kind == "conv":
                x = conv1d(x, weights[f"{layer.name}.weight"], weights[f"{layer.name}.bias"], layer.stride)
            elif layer.kind == "batchnorm":
                x = batchnorm_infer(x, *(weights[f"{layer.name}.{p}"] for p in BN_PARAMS), epsilon=epsilon)
            elif layer.kind == "relu":
                x = np.maximum(x, 0.0)
            else:
                x = maxpool1d(x, layer.pool_width, layer.stride)
        except DimensionError as exc:
            raise DimensionError(f"layer {layer.name}: {exc}") from exc
        if layer.name in wanted:
            out[layer.name] = FeatureMapMatrix(x, layer.name)
    return {t: out[t] for t in taps}


def global_sum_pool(fm, recording_id=""):
    """Sum every feature map over time: (n_l, s_l) -> (n_l,)."""
    return AggregatedEmbedding(np.asarray(fm.values).sum(axis=1), fm.layer, recording_id)

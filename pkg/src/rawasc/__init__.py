"""Raw-audio scene classification with compact layer embeddings.

Intermediate feature maps of a 1-D CNN are sum-pooled over time, projected
with PCA to a dimensionality chosen by compact dictionary learning, classified
per layer and fused late.
"""
from .acdl import AcdlConfig, acdl_fit, select_layer_dims
from .audio import Waveform, load_manifest, read_wav
from .convnet import forward_with_taps, global_sum_pool, read_weights, soundnet_chain
from .embed import LayerDataset, assemble_layer_dataset, pca_fit, pca_transform
from .ensemble import KernelParams, late_fuse, predict_proba, train_layer_classifier

__version__ = "0.1.0"

__all__ = [
    "AcdlConfig", "acdl_fit", "select_layer_dims",
    "Waveform", "load_manifest", "read_wav",
    "forward_with_taps", "global_sum_pool", "read_weights", "soundnet_chain",
    "LayerDataset", "assemble_layer_dataset", "pca_fit", "pca_transform",
    "KernelParams", "late_fuse", "predict_proba", "train_layer_classifier",
]

"""End-to-end model paths over frozen backbone features.

2D path: a volume of S slices is reshaped to B*S single slices, each slice is
embedded by a frozen convolutional stub, the mixture layer adapts the slice
features, attention pooling with a single learnable query collapses each
volume's S adapted features into one vector, and an independent-sigmoid head
scores the C findings.

3D path: the volume is embedded once by a frozen 3D stub (spatially pooled),
the mixture layer routes once per volume, and the head classifies directly —
no attention pooling.

The stubs stand in for large pretrained feature extractors: their weights are
drawn once from a seed and never receive gradients. A low-rank adapter may be
attached to the stub's final projection; that adapter and everything after it
is what trains.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .adapters import LoraAdapter, MolreLayer
from .rng import RngStream
from .tensor import ShapeError, Tensor, sigmoid, softmax, softmax_backward

_CHUNK = 256  # slices per im2col block, keeps the window buffers small
_NORM_EPS = 1e-6


def _rownorm(z: np.ndarray) -> np.ndarray:
    """Per-row standardization; the frozen trunks end with this so adapters
    and heads always see O(1) features regardless of conv weight draws."""
    mu = z.mean(axis=-1, keepdims=True)
    sd = z.std(axis=-1, keepdims=True)
    return (z - mu) / (sd + _NORM_EPS)


def _conv2d_relu(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 stride-2 pad-1 convolution + ReLU via im2col."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    n, ci, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, ci * 9)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    np.maximum(out, 0.0, out=out)
    return out.reshape(n, ho, wo, w.shape[0]).transpose(0, 3, 1, 2)


def _conv3d_relu(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3x3 stride-2 pad-1 convolution + ReLU via im2col."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4))[:, :, ::2, ::2, ::2]
    n, ci, so, ho, wo = win.shape[:5]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * so * ho * wo, ci * 27)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    np.maximum(out, 0.0, out=out)
    return out.reshape(n, so, ho, wo, w.shape[0]).transpose(0, 4, 1, 2, 3)


class SliceBackbone:
    """Frozen per-slice feature extractor: 3 strided convs, global average
    pool, and a linear projection to the working feature dimension.

    Weights come from `seed` alone, so two stubs built with the same seed
    produce identical features. Nothing here ever receives a gradient.
    """

    def __init__(
        self,
        in_channels: int = 3,
        feature_dim: int = 32,
        channels: tuple[int, int, int] = (16, 32, 64),
        seed: int = 1234,
    ):
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        self.channels = tuple(channels)
        self.trunk_dim = self.channels[-1]
        self.seed = seed
        rng = RngStream(seed, 7)
        self.conv_w, self.conv_b = [], []
        ci = in_channels
        for co in self.channels:
            std = np.sqrt(2.0 / (ci * 9))
            self.conv_w.append(Tensor(rng.normal(0.0, std, (co, ci, 3, 3))))
            self.conv_b.append(Tensor(np.zeros(co)))
            ci = co
        self.proj_w = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(self.trunk_dim), (feature_dim, self.trunk_dim))
        )
        self.proj_b = Tensor(np.zeros(feature_dim))

    def trunk(self, x: np.ndarray) -> np.ndarray:
        """Map slices (N, M, H, W) to pre-projection features (N, trunk_dim)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"backbone expects (N, {self.in_channels}, H, W), got {x.shape}"
            )
        outs = []
        for lo in range(0, x.shape[0], _CHUNK):
            h = x[lo:lo + _CHUNK]
            for w, b in zip(self.conv_w, self.conv_b):
                h = _conv2d_relu(h, w.data, b.data)
            outs.append(h.mean(axis=(2, 3)))
        return _rownorm(np.concatenate(outs, axis=0))

    def project(self, z: np.ndarray) -> np.ndarray:
        return z @ self.proj_w.data.T + self.proj_b.data

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.project(self.trunk(x))

    def frozen_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"backbone.conv{i}.w"] = w
            out[f"backbone.conv{i}.b"] = b
        out["backbone.proj.w"] = self.proj_w
        out["backbone.proj.b"] = self.proj_b
        return out


class VolumeBackbone:
    """Frozen whole-volume feature extractor: 3 strided 3D convs, spatial
    mean pool, linear projection. Same freezing contract as SliceBackbone."""

    def __init__(
        self,
        in_channels: int = 3,
        feature_dim: int = 32,
        channels: tuple[int, int, int] = (16, 32, 64),
        seed: int = 1234,
    ):
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        self.channels = tuple(channels)
        self.trunk_dim = self.channels[-1]
        self.seed = seed
        rng = RngStream(seed, 13)
        self.conv_w, self.conv_b = [], []
        ci = in_channels
        for co in self.channels:
            std = np.sqrt(2.0 / (ci * 27))
            self.conv_w.append(Tensor(rng.normal(0.0, std, (co, ci, 3, 3, 3))))
            self.conv_b.append(Tensor(np.zeros(co)))
            ci = co
        self.proj_w = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(self.trunk_dim), (feature_dim, self.trunk_dim))
        )
        self.proj_b = Tensor(np.zeros(feature_dim))

    def trunk(self, x: np.ndarray) -> np.ndarray:
        """Map volumes (N, M, S, H, W) to pooled features (N, trunk_dim)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"backbone expects (N, {self.in_channels}, S, H, W), got {x.shape}"
            )
        outs = []
        for lo in range(0, x.shape[0], 8):
            h = x[lo:lo + 8]
            for w, b in zip(self.conv_w, self.conv_b):
                h = _conv3d_relu(h, w.data, b.data)
            outs.append(h.mean(axis=(2, 3, 4)))
        return _rownorm(np.concatenate(outs, axis=0))

    def project(self, z: np.ndarray) -> np.ndarray:
        return z @ self.proj_w.data.T + self.proj_b.data

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.project(self.trunk(x))

    def frozen_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"backbone.conv{i}.w"] = w
            out[f"backbone.conv{i}.b"] = b
        out["backbone.proj.w"] = self.proj_w
        out["backbone.proj.b"] = self.proj_b
        return out


class AttentionPooler:
    """Single-query attention over a volume's slice features.

    Weights alpha = softmax(q . F^T / sqrt(d)) over the S slices; the pooled
    vector is the alpha-weighted sum. Gradients flow to the query and to the
    slice features.
    """

    def __init__(self, feature_dim: int):
        self.feature_dim = feature_dim
        self.q = Tensor.zeros((feature_dim,), requires_grad=True)

    def init(self, rng: RngStream) -> None:
        # zero query => uniform attention at init; training sharpens it
        self.q.data.fill(0.0)

    def forward(self, feats) -> Tensor:
        h, _ = self.forward_cached(feats)
        return Tensor(h)

    def forward_cached(self, feats) -> tuple[np.ndarray, dict]:
        f = feats.data if isinstance(feats, Tensor) else np.asarray(feats, dtype=np.float64)
        if f.ndim != 3 or f.shape[2] != self.feature_dim:
            raise ShapeError(f"pooler expects (B, S, {self.feature_dim}), got {f.shape}")
        if f.shape[1] == 0:
            raise ShapeError("cannot pool an empty volume (S=0)")
        scale = 1.0 / np.sqrt(self.feature_dim)
        scores = (f @ self.q.data) * scale
        alpha = softmax(scores, axis=1).data
        h = np.einsum("bs,bsd->bd", alpha, f)
        return h, {"f": f, "alpha": alpha, "scale": scale}

    def backward(self, cache: dict, grad_h: np.ndarray) -> np.ndarray:
        f, alpha, scale = cache["f"], cache["alpha"], cache["scale"]
        galpha = np.einsum("bd,bsd->bs", grad_h, f)
        gf = alpha[:, :, None] * grad_h[:, None, :]
        gscores = softmax_backward(galpha, alpha, axis=1)
        self.q.grad += scale * np.einsum("bs,bsd->d", gscores, f)
        gf += (scale * gscores)[:, :, None] * self.q.data[None, None, :]
        return gf

    def parameters(self) -> dict[str, Tensor]:
        return {"pooler.q": self.q}


def attention_pool(pooler: AttentionPooler, feats) -> Tensor:
    return pooler.forward(feats)


class ClassifierHead:
    """Per-class sigmoid scores: multi-label, no cross-class normalization."""

    def __init__(self, feature_dim: int, num_classes: int, bias: bool = True):
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.w = Tensor.zeros((num_classes, feature_dim), requires_grad=True)
        self.b = Tensor.zeros((num_classes,), requires_grad=True) if bias else None

    def init(self, rng: RngStream) -> None:
        # zero init: every class starts at p=0.5 and calibrates from the data
        self.w.data.fill(0.0)
        if self.b is not None:
            self.b.data.fill(0.0)

    def forward(self, h) -> Tensor:
        probs, _ = self.forward_cached(h)
        return Tensor(probs)

    def forward_cached(self, h) -> tuple[np.ndarray, dict]:
        hv = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
        if hv.ndim != 2 or hv.shape[1] != self.feature_dim:
            raise ShapeError(f"head expects (B, {self.feature_dim}), got {hv.shape}")
        logits = hv @ self.w.data.T
        if self.b is not None:
            logits = logits + self.b.data
        probs = sigmoid(logits).data
        return probs, {"h": hv, "probs": probs}

    def backward(self, cache: dict, grad_probs: np.ndarray) -> np.ndarray:
        p = cache["probs"]
        glogits = grad_probs * p * (1.0 - p)
        self.w.grad += glogits.T @ cache["h"]
        if self.b is not None:
            self.b.grad += glogits.sum(axis=0)
        return glogits @ self.w.data

    def parameters(self) -> dict[str, Tensor]:
        out = {"head.w": self.w}
        if self.b is not None:
            out["head.b"] = self.b
        return out


def classify(head: ClassifierHead, h) -> Tensor:
    return head.forward(h)


# ---------------------------------------------------------------------------
# Path compositions
# ---------------------------------------------------------------------------

def slices_of(x: np.ndarray) -> np.ndarray:
    """Flatten (B, M, S, H, W) volumes to (B*S, M, H, W) slices, batch-major:
    row b*S + s holds slice s of volume b."""
    b, m, s, h, w = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3, 4)).reshape(b * s, m, h, w)


def extract_slice_features(
    stub: SliceBackbone, x, lora: LoraAdapter | None = None
) -> Tensor:
    """Per-slice stub features for a batch of volumes, (B*S, d)."""
    xv = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    z = stub.trunk(slices_of(xv))
    f = stub.project(z)
    if lora is not None:
        f = f + lora.delta(z)
    return Tensor(f)


def forward_2d(
    stub: SliceBackbone,
    molre: MolreLayer | None,
    pooler: AttentionPooler,
    head: ClassifierHead,
    x,
    lora: LoraAdapter | None = None,
) -> Tensor:
    """Full 2D path: slices -> trunk -> adapted projection -> attention pool
    -> head. A mixture, when given, carries the frozen projection as its W0
    and routes per slice; otherwise the plain projection (plus an optional
    single adapter) applies."""
    xv = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if molre is not None:
        z = stub.trunk(slices_of(xv))
        f = molre.forward(z).data + stub.proj_b.data
    else:
        f = extract_slice_features(stub, xv, lora).data
    b, s = xv.shape[0], xv.shape[2]
    h = pooler.forward(f.reshape(b, s, -1)).data
    return head.forward(h)


def forward_3d(
    stub: VolumeBackbone,
    molre: MolreLayer | None,
    head: ClassifierHead,
    x,
    lora: LoraAdapter | None = None,
) -> Tensor:
    """3D path: pooled volume features -> adapted projection (one routing
    per volume) -> head."""
    xv = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    z = stub.trunk(xv)
    if molre is not None:
        f = molre.forward(z).data + stub.proj_b.data
    else:
        f = stub.project(z)
        if lora is not None:
            f = f + lora.delta(z)
    return head.forward(f)

"""The vascular-function estimation network.

K feature convolution layers (2^(3+k) filters each, 3x3 kernels, depth 1 in
the first layer and 3 afterwards) feed a single-filter output convolution.
A joint softmax over all voxels yields the probabilistic volume; the
predicted curve is the probability-weighted average of every voxel's time
curve. Training minimizes the negative Pearson correlation with the
reference curve, so predictions are penalized in time rather than amplitude.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateSignalError, FormatError, ValidationError
from ..types import CtpVolume4D, ProbVolume, VascularFunction, VFKind
from .ops import (conv3d_backward, conv3d_forward, relu_backward, relu_forward,
                  volume_softmax, volume_softmax_backward)

MODEL_MAGIC = b"ANET"
MODEL_VERSION = 1
_KIND_CODE = {VFKind.AIF: 0, VFKind.VOF: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


@dataclass
class ConvLayer:
    w: np.ndarray                    # (out_ch, in_ch, kz, ky, kx)
    b: np.ndarray                    # (out_ch,)
    vw: np.ndarray = None            # momentum buffers, shape-identical
    vb: np.ndarray = None

    def __post_init__(self):
        if self.vw is None:
            self.vw = np.zeros_like(self.w)
        if self.vb is None:
            self.vb = np.zeros_like(self.b)


@dataclass
class AifNetModel:
    kind: VFKind
    t_train: int
    conv_layers: list = field(default_factory=list)   # L_1 .. L_K
    out_layer: ConvLayer = None

    @property
    def k_layers(self) -> int:
        return len(self.conv_layers)

    def all_layers(self) -> list:
        return self.conv_layers + [self.out_layer]

    def copy_weights(self) -> list:
        return [(layer.w.copy(), layer.b.copy()) for layer in self.all_layers()]

    def load_weights(self, snapshot: list) -> None:
        for layer, (w, b) in zip(self.all_layers(), snapshot):
            layer.w = w.copy()
            layer.b = b.copy()


def layer_channels(k: int) -> int:
    return 2 ** (3 + k)


def _glorot(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    o, c, kz, ky, kx = shape
    taps = kz * ky * kx
    limit = np.sqrt(6.0 / (c * taps + o * taps))
    return rng.uniform(-limit, limit, size=shape)


def build_model(kind: VFKind, k_layers: int, t_train: int,
                rng: np.random.Generator) -> AifNetModel:
    """Fresh model with seeded feature weights.

    The output layer starts at zero so the initial probabilistic volume is
    uniform; a variance-preserving init there saturates the volume softmax
    (one random voxel takes all the mass) and gradients die.
    """
    if k_layers < 1:
        raise ValidationError(f"need at least one feature layer, got {k_layers}")
    if t_train < 2:
        raise ValidationError(f"t_train must be >= 2, got {t_train}")
    layers = []
    in_ch = t_train
    for k in range(1, k_layers + 1):
        out_ch = layer_channels(k)
        kz = 1 if k == 1 else 3
        w = _glorot(rng, (out_ch, in_ch, kz, 3, 3))
        layers.append(ConvLayer(w=w, b=np.zeros(out_ch)))
        in_ch = out_ch
    out = ConvLayer(w=np.zeros((1, in_ch, 3, 3, 3)), b=np.zeros(1))
    return AifNetModel(kind=kind, t_train=t_train, conv_layers=layers, out_layer=out)


def _stack_input(x: CtpVolume4D, t_train: int) -> np.ndarray:
    """First t_train frames as channels; short series replicate the last frame."""
    d = x.data.astype(np.float64)
    n = d.shape[0]
    if n >= t_train:
        return d[:t_train]
    pad = np.repeat(d[-1:], t_train - n, axis=0)
    return np.concatenate([d, pad], axis=0)


def weighted_curve(x: CtpVolume4D, probs: np.ndarray) -> np.ndarray:
    """Probability-weighted average curve over the full series, float64."""
    flat = x.data.reshape(x.n_frames, -1).astype(np.float64)
    return flat @ probs.reshape(-1)


def _forward_cached(model: AifNetModel, x: CtpVolume4D):
    if x.spatial_shape[1] < 3 or x.spatial_shape[2] < 3:
        raise ValidationError(
            f"spatial dims {x.spatial_shape} too small: need >= 3 in y and x")
    act = _stack_input(x, model.t_train)
    caches = []
    for layer in model.conv_layers:
        pre, conv_cache = conv3d_forward(act, layer.w, layer.b)
        act, mask = relu_forward(pre)
        caches.append((conv_cache, mask))
    logits, out_cache = conv3d_forward(act, model.out_layer.w, model.out_layer.b)
    logits = logits[0]
    if not np.isfinite(logits).all():
        raise ValidationError("non-finite activations in forward pass")
    probs = volume_softmax(logits)
    yhat = weighted_curve(x, probs)
    return probs, yhat, caches, out_cache


def forward(model: AifNetModel, x: CtpVolume4D) -> tuple[ProbVolume, VascularFunction]:
    """Probabilistic volume plus the predicted curve over all frames of x."""
    probs, yhat, _, _ = _forward_cached(model, x)
    return (ProbVolume(probs=probs),
            VascularFunction(values=yhat, dt_seconds=x.dt_seconds, kind=model.kind))


predict = forward   # inference is the same full-length pass


def pearson_loss(y, yhat) -> float:
    """Negative Pearson correlation between two equal-length curves."""
    loss, _ = _pearson_loss_grad(_curve_values(y), _curve_values(yhat))
    return loss


def _curve_values(y) -> np.ndarray:
    if isinstance(y, VascularFunction):
        return y.values.astype(np.float64)
    return np.asarray(y, dtype=np.float64)


def _pearson_loss_grad(y: np.ndarray, yhat: np.ndarray):
    """Loss -rho(y, yhat) and its gradient with respect to yhat."""
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValidationError(f"curve shapes differ: {y.shape} vs {yhat.shape}")
    if y.size < 2:
        raise ValidationError("need at least 2 samples")
    yc = y - y.mean()
    hc = yhat - yhat.mean()
    ny = np.sqrt(yc @ yc)
    nh = np.sqrt(hc @ hc)
    denom = ny * nh
    if denom < 1e-12:
        raise DegenerateSignalError(
            f"zero-variance signal: correlation denominator {denom} < 1e-12")
    rho = float((yc @ hc) / denom)
    # d(-rho)/dyhat; yc and hc are centered so no extra mean correction is needed
    grad = -(yc / denom - rho * hc / (nh * nh))
    return -rho, grad


def gradients(model: AifNetModel, x: CtpVolume4D, y: VascularFunction):
    """Loss and exact reverse-mode gradients for every weight and bias.

    Returns (loss, grads) with grads a list of (dw, db) ordered L_1..L_K, L_out.
    """
    probs, yhat, caches, out_cache = _forward_cached(model, x)
    y_vals = _curve_values(y)
    loss, dyhat = _pearson_loss_grad(y_vals, yhat)

    flat = x.data.reshape(x.n_frames, -1).astype(np.float64)
    dprobs = (dyhat @ flat).reshape(probs.shape)
    dlogits = volume_softmax_backward(dprobs, probs)

    grads = [None] * (model.k_layers + 1)
    dact, dw, db = conv3d_backward(dlogits[None], model.out_layer.w, out_cache)
    grads[-1] = (dw, db)
    for i in range(model.k_layers - 1, -1, -1):
        conv_cache, mask = caches[i]
        dpre = relu_backward(dact, mask)
        dact, dw, db = conv3d_backward(dpre, model.conv_layers[i].w, conv_cache,
                                       need_dx=(i > 0))
        grads[i] = (dw, db)
    return loss, grads


def save_model(model: AifNetModel, path) -> None:
    from ..io import atomic_write_bytes

    parts = [MODEL_MAGIC,
             struct.pack("<III", MODEL_VERSION, model.k_layers, model.t_train),
             struct.pack("<B", _KIND_CODE[model.kind])]
    for layer in model.all_layers():
        o, c, kz, ky, kx = layer.w.shape
        parts.append(struct.pack("<IIIII", o, c, kz, ky, kx))
        parts.append(layer.w.astype("<f4").tobytes())
        parts.append(layer.b.astype("<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_model(path) -> AifNetModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 17 or blob[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file (magic {blob[:4]!r})")
    version, k_layers, t_train = struct.unpack("<III", blob[4:16])
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    code = blob[16]
    if code not in _CODE_KIND:
        raise FormatError(f"{path}: unknown function kind {code}")
    offset = 17
    layers = []
    expected_in = t_train
    for k in range(1, k_layers + 2):
        if offset + 20 > len(blob):
            raise FormatError(f"{path}: truncated layer header")
        o, c, kz, ky, kx = struct.unpack("<IIIII", blob[offset:offset + 20])
        offset += 20
        is_out = k == k_layers + 1
        want_o = 1 if is_out else layer_channels(k)
        want_kz = 3 if (is_out or k > 1) else 1
        if o != want_o or c != expected_in or kz != want_kz or ky != 3 or kx != 3:
            raise FormatError(
                f"{path}: layer {k} shape ({o},{c},{kz},{ky},{kx}) violates the "
                "architecture contract")
        n_w = o * c * kz * ky * kx
        need = 4 * (n_w + o)
        if offset + need > len(blob):
            raise FormatError(f"{path}: truncated layer payload")
        w = np.frombuffer(blob, dtype="<f4", count=n_w, offset=offset)
        w = w.reshape(o, c, kz, ky, kx).astype(np.float64)
        offset += 4 * n_w
        b = np.frombuffer(blob, dtype="<f4", count=o, offset=offset).astype(np.float64)
        offset += 4 * o
        layers.append(ConvLayer(w=w, b=b))
        expected_in = o
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return AifNetModel(kind=_CODE_KIND[code], t_train=t_train,
                       conv_layers=layers[:-1], out_layer=layers[-1])

"""Forward and backward passes for the layer types of the network.

Every operation is a pure function: parameters and cached inputs go in,
activations or gradients come out. Convolutions are valid (no padding) with
stride 1; the transposed convolution is the exact adjoint of that map, which is
what lets the decoder mirror the encoder shape by shape.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.tensor_core.errors import ArgumentError, DimensionError
from src.tensor_core.rng import Rng
from src.tensor_core.tensor_ops import DTYPE, Tensor


@dataclass(frozen=True)
class ConvLayer:
    kernels: Tensor  # [out_ch, in_ch, kh, kw]
    bias: Tensor  # [out_ch]

    def __post_init__(self):
        _check_kernel_bank(self.kernels, self.bias, bias_axis=0)

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass(frozen=True)
class TransposedConvLayer:
    """Decoder convolution; kernels are laid out like the encoder layer it mirrors"""

    kernels: Tensor  # [in_ch, out_ch, kh, kw]
    bias: Tensor  # [out_ch]

    def __post_init__(self):
        _check_kernel_bank(self.kernels, self.bias, bias_axis=1)

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass(frozen=True)
class DenseLayer:
    weights: Tensor  # [out, in]
    bias: Tensor  # [out]

    def __post_init__(self):
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise DimensionError(f"dense weights must be [out, in], got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"dense bias {self.bias.shape} does not match weights {self.weights.shape}"
            )


@dataclass(frozen=True)
class PoolSwitches:
    """Argmax position of every pooled element, as a flat index into its H*W input map"""

    indices: np.ndarray  # int64 [B, C, H/2, W/2]
    input_shape: Tuple[int, int, int, int]


@dataclass(frozen=True)
class DropoutMask:
    mask: Tensor  # values in {0, 1/p_keep}
    p_keep: float


def _check_kernel_bank(kernels: Tensor, bias: Tensor, bias_axis: int):
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be rank 4, got shape {kernels.shape}")
    if min(kernels.shape[:2]) < 1:
        raise DimensionError(f"kernel bank needs at least one channel each way, got {kernels.shape}")
    kh, kw = kernels.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel size must be odd, got {kh}x{kw}")
    if bias.shape != (kernels.shape[bias_axis],):
        raise DimensionError(f"bias {bias.shape} does not match kernels {kernels.shape}")


def _windows(x: Tensor, kh: int, kw: int) -> np.ndarray:
    # [B, C, H', W', kh, kw] view, no copy
    return sliding_window_view(x, (kh, kw), axis=(2, 3))


def _correlate(x: Tensor, w: Tensor) -> Tensor:
    """Valid cross-correlation of x [B,C,H,W] with w [O,C,kh,kw]"""
    out = np.tensordot(_windows(x, w.shape[2], w.shape[3]), w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _correlate_adjoint(g: Tensor, w: Tensor) -> Tensor:
    """Adjoint of ``_correlate`` w.r.t. its input: full correlation with flipped kernels"""
    kh, kw = w.shape[2:]
    padded = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    flipped = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return _correlate(padded, flipped)


def _kernel_gradient(x: Tensor, g: Tensor, kh: int, kw: int) -> Tensor:
    """sum over b,y,x of g[b,o,y,x] * x[b,c,y+i,x+j], shaped [O,C,kh,kw]"""
    return np.tensordot(g, _windows(x, kh, kw), axes=([0, 2, 3], [0, 2, 3]))


def conv2d_forward(layer: ConvLayer, x: Tensor) -> Tensor:
    kh, kw = layer.kernels.shape[2:]
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise DimensionError(
            f"conv input {x.shape} does not match kernels {layer.kernels.shape}"
        )
    if x.shape[2] < kh or x.shape[3] < kw:
        raise DimensionError(f"conv input {x.shape} is smaller than kernel {kh}x{kw}")
    return _correlate(x, layer.kernels) + layer.bias[None, :, None, None]


def conv2d_backward(layer: ConvLayer, x: Tensor, grad_out: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    kh, kw = layer.kernels.shape[2:]
    expected = (x.shape[0], layer.out_channels, x.shape[2] - kh + 1, x.shape[3] - kw + 1)
    if grad_out.shape != expected:
        raise DimensionError(f"conv grad_out {grad_out.shape} does not match output shape {expected}")
    grad_input = _correlate_adjoint(grad_out, layer.kernels)
    grad_kernels = _kernel_gradient(x, grad_out, kh, kw)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_kernels, grad_bias


def transposed_conv2d_forward(layer: TransposedConvLayer, x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise DimensionError(
            f"transposed conv input {x.shape} does not match kernels {layer.kernels.shape}"
        )
    return _correlate_adjoint(x, layer.kernels) + layer.bias[None, :, None, None]


def transposed_conv2d_backward(
    layer: TransposedConvLayer, x: Tensor, grad_out: Tensor
) -> Tuple[Tensor, Tensor, Tensor]:
    kh, kw = layer.kernels.shape[2:]
    expected = (x.shape[0], layer.out_channels, x.shape[2] + kh - 1, x.shape[3] + kw - 1)
    if grad_out.shape != expected:
        raise DimensionError(
            f"transposed conv grad_out {grad_out.shape} does not match output shape {expected}"
        )
    grad_input = _correlate(grad_out, layer.kernels)
    grad_kernels = _kernel_gradient(grad_out, x, kh, kw)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_input, grad_kernels, grad_bias


def maxpool2_forward(x: Tensor) -> Tuple[Tensor, PoolSwitches]:
    """Disjoint 2x2 max pooling; ties go to the first element in row-major window order"""
    if x.ndim != 4:
        raise DimensionError(f"maxpool input must be [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool needs even spatial dims, got {H}x{W}")
    h, w = H // 2, W // 2
    blocks = x.reshape(B, C, h, 2, w, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h, w, 4)
    position = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, position[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(h)[:, None] + position // 2
    cols = 2 * np.arange(w)[None, :] + position % 2
    return out, PoolSwitches(indices=rows * W + cols, input_shape=(B, C, H, W))


def maxpool2_backward(switches: PoolSwitches, grad_out: Tensor) -> Tensor:
    if grad_out.shape != switches.indices.shape:
        raise DimensionError(
            f"maxpool grad_out {grad_out.shape} does not match switches {switches.indices.shape}"
        )
    B, C, H, W = switches.input_shape
    grad_input = np.zeros((B, C, H * W), dtype=DTYPE)
    np.put_along_axis(grad_input, switches.indices.reshape(B, C, -1), grad_out.reshape(B, C, -1), axis=-1)
    return grad_input.reshape(B, C, H, W)


def unpool_duplicate_forward(x: Tensor) -> Tensor:
    """Copy each element into all four cells of its 2x2 output block"""
    if x.ndim != 4:
        raise DimensionError(f"unpool input must be [B,C,h,w], got {x.shape}")
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def unpool_duplicate_backward(grad_out: Tensor) -> Tensor:
    if grad_out.ndim != 4:
        raise DimensionError(f"unpool grad_out must be [B,C,H,W], got {grad_out.shape}")
    B, C, H, W = grad_out.shape
    if H % 2 or W % 2:
        raise DimensionError(f"unpool grad_out needs even spatial dims, got {H}x{W}")
    return grad_out.reshape(B, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5))


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != layer.weights.shape[1]:
        raise DimensionError(f"dense input {x.shape} does not match weights {layer.weights.shape}")
    return x @ layer.weights.T + layer.bias


def dense_backward(layer: DenseLayer, x: Tensor, grad_out: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    if grad_out.shape != (x.shape[0], layer.weights.shape[0]):
        raise DimensionError(
            f"dense grad_out {grad_out.shape} does not match output shape "
            f"{(x.shape[0], layer.weights.shape[0])}"
        )
    return grad_out @ layer.weights, grad_out.T @ x, grad_out.sum(axis=0)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    return np.where(x > 0, grad_out, 0.0)


def softmax(logits: Tensor) -> Tensor:
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"softmax expects [B, m] with m >= 2, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def dropout_forward(x: Tensor, p_keep: float, rng: Rng) -> Tuple[Tensor, DropoutMask]:
    """Inverted dropout; only called in training mode"""
    if not 0.0 < p_keep <= 1.0:
        raise ArgumentError(f"p_keep must be in (0, 1], got {p_keep}")
    if p_keep == 1.0:
        mask = np.ones_like(x)
    else:
        mask = (rng.random(x.shape) < p_keep) / p_keep
    return x * mask, DropoutMask(mask=mask, p_keep=p_keep)


def dropout_backward(mask: DropoutMask, grad_out: Tensor) -> Tensor:
    if grad_out.shape != mask.mask.shape:
        raise DimensionError(f"dropout grad_out {grad_out.shape} does not match mask {mask.mask.shape}")
    return grad_out * mask.mask


def he_normal(rng: Rng, shape, fan_in: int) -> Tensor:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


def init_conv_layer(rng: Rng, out_channels: int, in_channels: int, kernel_size: int) -> ConvLayer:
    shape = (out_channels, in_channels, kernel_size, kernel_size)
    return ConvLayer(
        kernels=he_normal(rng, shape, in_channels * kernel_size * kernel_size),
        bias=np.zeros(out_channels, dtype=DTYPE),
    )


def init_transposed_conv_layer(
    rng: Rng, in_channels: int, out_channels: int, kernel_size: int
) -> TransposedConvLayer:
    shape = (in_channels, out_channels, kernel_size, kernel_size)
    return TransposedConvLayer(
        kernels=he_normal(rng, shape, in_channels * kernel_size * kernel_size),
        bias=np.zeros(out_channels, dtype=DTYPE),
    )


def init_dense_layer(rng: Rng, out_features: int, in_features: int) -> DenseLayer:
    return DenseLayer(
        weights=he_normal(rng, (out_features, in_features), in_features),
        bias=np.zeros(out_features, dtype=DTYPE),
    )

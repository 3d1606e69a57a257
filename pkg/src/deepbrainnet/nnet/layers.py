"""Network layers with explicit forward and backward passes.

Tensors are plain numpy float64 arrays in NCHW order. Convolutions are
cross-correlations with zero padding; output spatial size is
floor((H + 2p - K) / s) + 1. Each layer caches what its backward pass needs,
accumulates parameter gradients into its own buffers, and returns the
gradient with respect to its input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import Prng


def as_tensor4(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"expected a 4-D (batch, channels, height, width) tensor, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LayerSpec:
    """Shape description used for parameter accounting."""

    kind: str
    kernel: int = 1
    c_in: int = 1
    c_out: int = 1
    features_in: int = 1
    features_out: int = 1
    bias: bool = True


def param_count(spec: LayerSpec) -> int:
    """Trainable parameter count for a layer shape.

    A standard convolution costs K*K*C_in*C_out (+C_out bias); the
    depthwise-separable pair costs K*K*C_in for the spatial stage plus
    C_in*C_out for the channel-mixing stage (+C_in+C_out per-stage biases),
    which shrinks toward 1/C_out + 1/K^2 of the standard count.
    """
    k, ci, co = spec.kernel, spec.c_in, spec.c_out
    b = spec.bias
    if spec.kind == "conv2d":
        return k * k * ci * co + (co if b else 0)
    if spec.kind == "depthwise_conv2d":
        return k * k * ci + (ci if b else 0)
    if spec.kind == "pointwise_conv2d":
        return ci * co + (co if b else 0)
    if spec.kind == "ds_block":
        return k * k * ci + ci * co + ((ci + co) if b else 0)
    if spec.kind == "residual_block":
        # two same-channel convolutions
        return 2 * (k * k * ci * ci + (ci if b else 0))
    if spec.kind == "dense":
        return spec.features_in * spec.features_out + (spec.features_out if b else 0)
    if spec.kind in ("relu", "global_avg_pool", "dropout", "softmax"):
        return 0
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def _conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"spatial size {size} too small for kernel {kernel}, stride {stride}, padding {padding}"
        )
    return out


class Layer:
    kind = "layer"

    def forward(self, x, training: bool = False, rng: Prng | None = None):
        raise NotImplementedError

    def children(self) -> list["Layer"]:
        return []

    def backward(self, grad):
        raise NotImplementedError

    def parameters(self) -> list[np.ndarray]:
        return []

    def gradients(self) -> list[np.ndarray]:
        return []

    def param_names(self) -> list[str]:
        return []

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grads(self) -> None:
        for g in self.gradients():
            g[...] = 0.0


def _kaiming(rng: Prng, shape, fan_in: int) -> np.ndarray:
    return rng.normals(shape, sigma=np.sqrt(2.0 / fan_in))


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, rng: Prng | None = None):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        rng = rng or Prng(0)
        self.w = _kaiming(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel)
        self.b = np.zeros(c_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x, training=False, rng=None):
        x = as_tensor4(x)
        n, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        oh, ow = _conv_out_size(h, k, s, p), _conv_out_size(w, k, s, p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        out = np.zeros((n, self.c_out, oh, ow))
        for i in range(k):
            for j in range(k):
                sl = xp[:, :, i : i + s * oh : s, j : j + s * ow : s]
                out += np.einsum("nchw,oc->nohw", sl, self.w[:, :, i, j])
        out += self.b[None, :, None, None]
        self._cache = (xp, x.shape, oh, ow)
        return out

    def backward(self, grad):
        xp, x_shape, oh, ow = self._cache
        k, s, p = self.kernel, self.stride, self.padding
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = xp[:, :, i : i + s * oh : s, j : j + s * ow : s]
                self.dw[:, :, i, j] += np.einsum("nohw,nchw->oc", grad, sl)
                dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += np.einsum(
                    "nohw,oc->nchw", grad, self.w[:, :, i, j]
                )
        self.db += grad.sum(axis=(0, 2, 3))
        n, c, h, w = x_shape
        return dxp[:, :, p : p + h, p : p + w]

    def parameters(self):
        return [self.w, self.b]

    def gradients(self):
        return [self.dw, self.db]

    def param_names(self):
        return ["weight", "bias"]


class DepthwiseConv2d(Layer):
    """K x K convolution applied per channel; mixes no channels."""

    kind = "depthwise_conv2d"

    def __init__(self, channels, kernel, stride=1, padding=0, rng: Prng | None = None):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.channels = channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        rng = rng or Prng(0)
        self.w = _kaiming(rng, (channels, kernel, kernel), kernel * kernel)
        self.b = np.zeros(channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x, training=False, rng=None):
        x = as_tensor4(x)
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        oh, ow = _conv_out_size(h, k, s, p), _conv_out_size(w, k, s, p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        out = np.zeros((n, c, oh, ow))
        for i in range(k):
            for j in range(k):
                sl = xp[:, :, i : i + s * oh : s, j : j + s * ow : s]
                out += sl * self.w[None, :, i, j, None, None]
        out += self.b[None, :, None, None]
        self._cache = (xp, x.shape, oh, ow)
        return out

    def backward(self, grad):
        xp, x_shape, oh, ow = self._cache
        k, s, p = self.kernel, self.stride, self.padding
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = xp[:, :, i : i + s * oh : s, j : j + s * ow : s]
                self.dw[:, i, j] += (grad * sl).sum(axis=(0, 2, 3))
                dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += (
                    grad * self.w[None, :, i, j, None, None]
                )
        self.db += grad.sum(axis=(0, 2, 3))
        n, c, h, w = x_shape
        return dxp[:, :, p : p + h, p : p + w]

    def parameters(self):
        return [self.w, self.b]

    def gradients(self):
        return [self.dw, self.db]

    def param_names(self):
        return ["weight", "bias"]


class PointwiseConv2d(Layer):
    """1 x 1 convolution; mixes only channels."""

    kind = "pointwise_conv2d"

    def __init__(self, c_in, c_out, rng: Prng | None = None):
        self.c_in, self.c_out = c_in, c_out
        rng = rng or Prng(0)
        self.w = _kaiming(rng, (c_out, c_in), c_in)
        self.b = np.zeros(c_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x, training=False, rng=None):
        x = as_tensor4(x)
        if x.shape[1] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {x.shape[1]}")
        self._cache = x
        return np.einsum("nchw,oc->nohw", x, self.w) + self.b[None, :, None, None]

    def backward(self, grad):
        x = self._cache
        self.dw += np.einsum("nohw,nchw->oc", grad, x)
        self.db += grad.sum(axis=(0, 2, 3))
        return np.einsum("nohw,oc->nchw", grad, self.w)

    def parameters(self):
        return [self.w, self.b]

    def gradients(self):
        return [self.dw, self.db]

    def param_names(self):
        return ["weight", "bias"]


class ReLU(Layer):
    kind = "relu"

    # distance of the last forward's inputs from the kink at zero; used by
    # gradient-check harnesses to avoid finite-difference branch flips
    last_min_abs_input: float = np.inf

    def forward(self, x, training=False, rng=None):
        self.last_min_abs_input = float(np.abs(x).min()) if x.size else np.inf
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def forward(self, x, training=False, rng=None):
        x = as_tensor4(x)
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None], self._shape) / (h * w)


class Dense(Layer):
    kind = "dense"

    def __init__(self, features_in, features_out, rng: Prng | None = None):
        self.features_in, self.features_out = features_in, features_out
        rng = rng or Prng(0)
        self.w = _kaiming(rng, (features_out, features_in), features_in)
        self.b = np.zeros(features_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.features_in:
            raise ValueError(f"expected {self.features_in} features, got {x.shape[1]}")
        self._cache = x
        return x @ self.w.T + self.b

    def backward(self, grad):
        self.dw += grad.T @ self._cache
        self.db += grad.sum(axis=0)
        return grad @ self.w

    def parameters(self):
        return [self.w, self.b]

    def gradients(self):
        return [self.dw, self.db]

    def param_names(self):
        return ["weight", "bias"]


class Dropout(Layer):
    """Inverted dropout; identity when not training or when rate is 0."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._mask = None
            return np.asarray(x, dtype=np.float64)
        if rng is None:
            raise ValueError("training-mode dropout needs a Prng")
        keep = rng.uniforms(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False, rng=None):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._probs = e / e.sum(axis=1, keepdims=True)
        return self._probs

    def backward(self, grad):
        p = self._probs
        return p * (grad - (grad * p).sum(axis=1, keepdims=True))


class DsBlock(Layer):
    """Depthwise-separable block: per-channel K x K conv, 1 x 1 channel mix, ReLU.

    Without the trailing activation the two stages compose into one dense
    convolution whose kernel is w_point[o, c] * w_depth[c, i, j].
    """

    kind = "ds_block"

    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=1, rng: Prng | None = None):
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.depthwise = DepthwiseConv2d(c_in, kernel, stride, padding, rng=rng)
        self.pointwise = PointwiseConv2d(c_in, c_out, rng=rng)
        self.relu = ReLU()

    def forward(self, x, training=False, rng=None):
        return self.relu.forward(self.pointwise.forward(self.depthwise.forward(x)))

    def backward(self, grad):
        return self.depthwise.backward(self.pointwise.backward(self.relu.backward(grad)))

    def children(self):
        return [self.depthwise, self.pointwise, self.relu]

    def parameters(self):
        return self.depthwise.parameters() + self.pointwise.parameters()

    def gradients(self):
        return self.depthwise.gradients() + self.pointwise.gradients()

    def param_names(self):
        return [f"depthwise.{n}" for n in self.depthwise.param_names()] + [
            f"pointwise.{n}" for n in self.pointwise.param_names()
        ]


class ResidualBlock(Layer):
    """conv -> relu -> conv plus identity skip, then relu: out = relu(F(x) + x)."""

    kind = "residual_block"

    def __init__(self, channels, kernel=3, rng: Prng | None = None):
        self.channels = channels
        self.kernel = kernel
        padding = kernel // 2
        self.conv1 = Conv2d(channels, channels, kernel, 1, padding, rng=rng)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(channels, channels, kernel, 1, padding, rng=rng)
        self.relu2 = ReLU()

    def forward(self, x, training=False, rng=None):
        x = as_tensor4(x)
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        residual = self.conv2.forward(self.relu1.forward(self.conv1.forward(x)))
        return self.relu2.forward(residual + x)

    def backward(self, grad):
        grad_sum = self.relu2.backward(grad)
        grad_branch = self.conv1.backward(self.relu1.backward(self.conv2.backward(grad_sum)))
        return grad_branch + grad_sum

    def children(self):
        return [self.conv1, self.relu1, self.conv2, self.relu2]

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()

    def gradients(self):
        return self.conv1.gradients() + self.conv2.gradients()

    def param_names(self):
        return [f"conv1.{n}" for n in self.conv1.param_names()] + [
            f"conv2.{n}" for n in self.conv2.param_names()
        ]


def compose_separable_kernel(block_or_pair) -> tuple[np.ndarray, np.ndarray]:
    """Dense (c_out, c_in, K, K) kernel and bias equivalent to depthwise+pointwise.

    w_dense[o, c, i, j] = w_point[o, c] * w_depth[c, i, j];
    b_dense[o] = b_point[o] + sum_c w_point[o, c] * b_depth[c].
    """
    if isinstance(block_or_pair, DsBlock):
        depthwise, pointwise = block_or_pair.depthwise, block_or_pair.pointwise
    else:
        depthwise, pointwise = block_or_pair
    w = np.einsum("oc,ckl->ockl", pointwise.w, depthwise.w)
    b = pointwise.b + pointwise.w @ depthwise.b
    return w, b

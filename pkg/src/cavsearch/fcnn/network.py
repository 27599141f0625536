"""Encoder-decoder segmentation network.

Architecture for ``depth`` d and ``base_channels`` b: d encoder blocks
(two k x k same-padded convolutions, each followed by ReLU, then 2x2 max
pooling) doubling channels from b to b*2^(d-1); a bottleneck block at
b*2^d; d decoder blocks (2x nearest-neighbor upsampling, a 1x1
convolution + ReLU halving channels, concatenation with the matching
encoder output, then two k x k convolutions + ReLU); and a final 1x1
convolution producing one logit per pixel.  ``sigmoid`` of the logit is
the lesion probability.  The up-projection is 1x1 because the two k x k
convolutions that follow the concatenation already mix space; a wider
up kernel costs a third of the network's arithmetic for no measurable
quality gain.

Parameters live in an ordered dict keyed ``enc{i}_conv{j}``,
``bottleneck_conv{j}``, ``dec{i}_up``, ``dec{i}_conv{j}`` and ``head``
(suffix ``_w``/``_b``), in forward-pass order, stored as
(out_channels, in_channels, k, k) float32.  Weights are initialized
He-uniform (bound sqrt(6 / fan_in)), biases zero.  Convolutions run
through the compiled direct kernels in :mod:`.kernels`; resampling and
activations use :mod:`.ops`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from . import kernels, ops


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 3
    base_channels: int = 8
    kernel_size: int = 3

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be at least 1")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be at least 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")


def _conv_param_shapes(cfg: NetworkConfig) -> dict[str, tuple]:
    """Layer name -> (weight shape, padding), in forward order."""
    k = cfg.kernel_size
    b = cfg.base_channels
    p = k // 2
    layers: dict[str, tuple] = {}
    c_prev = 1
    for i in range(cfg.depth):
        c = b * 2 ** i
        layers[f"enc{i}_conv1"] = ((c, c_prev, k, k), p)
        layers[f"enc{i}_conv2"] = ((c, c, k, k), p)
        c_prev = c
    c = b * 2 ** cfg.depth
    layers["bottleneck_conv1"] = ((c, c_prev, k, k), p)
    layers["bottleneck_conv2"] = ((c, c, k, k), p)
    c_prev = c
    for i in reversed(range(cfg.depth)):
        c = b * 2 ** i
        layers[f"dec{i}_up"] = ((c, c_prev, 1, 1), 0)
        layers[f"dec{i}_conv1"] = ((c, 2 * c, k, k), p)
        layers[f"dec{i}_conv2"] = ((c, c, k, k), p)
        c_prev = c
    layers["head"] = ((1, c_prev, 1, 1), 0)
    return layers


def param_shapes(cfg: NetworkConfig) -> dict[str, tuple]:
    """Parameter name -> array shape, in storage order."""
    shapes: dict[str, tuple] = {}
    for name, (w_shape, _) in _conv_param_shapes(cfg).items():
        shapes[name + "_w"] = w_shape
        shapes[name + "_b"] = (w_shape[0],)
    return shapes


class UNet:
    """Stateful wrapper: parameters, forward/backward, SGD update."""

    def __init__(self, config: NetworkConfig,
                 rng: np.random.Generator | None = None,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        self._layers = _conv_param_shapes(config)
        expected = param_shapes(config)
        if params is not None:
            if list(params) != list(expected):
                raise ConfigError("parameter names do not match architecture")
            for name, arr in params.items():
                if tuple(arr.shape) != expected[name]:
                    raise ConfigError(
                        f"parameter {name} has shape {tuple(arr.shape)}, "
                        f"expected {expected[name]}")
            self.params = {k: np.asarray(v, dtype=np.float32)
                           for k, v in params.items()}
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            self.params = {}
            for name, (w_shape, _) in self._layers.items():
                fan_in = w_shape[1] * w_shape[2] * w_shape[3]
                bound = np.sqrt(6.0 / fan_in)
                self.params[name + "_w"] = rng.uniform(
                    -bound, bound, size=w_shape).astype(np.float32)
                self.params[name + "_b"] = np.zeros(w_shape[0],
                                                    dtype=np.float32)
        self._velocity: dict[str, np.ndarray] | None = None
        self._cache: dict | None = None
        self.logits: np.ndarray | None = None

    # -- forward -------------------------------------------------------

    def _check_input(self, x: np.ndarray):
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"input must be (N, 1, H, W), got {x.shape}")
        step = 2 ** self.config.depth
        if x.shape[2] % step or x.shape[3] % step:
            raise ShapeError(
                f"spatial dims must be divisible by {step}, got "
                f"{x.shape[2]}x{x.shape[3]}")

    def _conv_relu(self, name: str, x: np.ndarray, keep: bool,
                   relu: bool = True) -> np.ndarray:
        """Convolution (+ ReLU), caching what backward needs: the padded
        input and, for ReLU layers, the pre-activation."""
        w = self.params[name + "_w"]
        _, padding = self._layers[name]
        z, ctx = kernels.conv_fwd(x, w, self.params[name + "_b"], padding)
        if keep:
            self._cache[name] = (ctx, z if relu else None)
        return np.maximum(z, 0) if relu else z

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Per-pixel lesion probabilities, shape (N, 1, H, W).

        With ``train=True`` intermediate results are cached so that
        ``backward`` can run.  ``self.logits`` holds the pre-sigmoid
        map of the latest forward pass.
        """
        self._check_input(x)
        d = self.config.depth
        self._cache = {} if train else None
        keep = train
        dtype = next(iter(self.params.values())).dtype
        # Fixed input centering: callers pass intensities in [0, 1]; the
        # shift to [-0.5, 0.5] is part of the architecture (zero-mean
        # inputs condition the early layers much better) and has
        # identity gradient, so backward is unaffected.
        h = np.ascontiguousarray(x, dtype=dtype) - dtype.type(0.5)
        skips = []
        for i in range(d):
            h = self._conv_relu(f"enc{i}_conv1", h, keep)
            h = self._conv_relu(f"enc{i}_conv2", h, keep)
            skips.append(h)
            if keep:
                self._cache[f"pool{i}_in"] = h
            h = ops.downsample(h)
        h = self._conv_relu("bottleneck_conv1", h, keep)
        h = self._conv_relu("bottleneck_conv2", h, keep)
        for i in reversed(range(d)):
            h = ops.upsample(h)
            h = self._conv_relu(f"dec{i}_up", h, keep)
            h = np.concatenate([skips[i], h], axis=1)
            h = self._conv_relu(f"dec{i}_conv1", h, keep)
            h = self._conv_relu(f"dec{i}_conv2", h, keep)
        self.logits = self._conv_relu("head", h, keep, relu=False)
        return ops.activation(self.logits, "sigmoid")

    # -- backward ------------------------------------------------------

    def _conv_relu_backward(self, name: str, gy: np.ndarray,
                            grads: dict, relu: bool = True) -> np.ndarray:
        ctx, z = self._cache.pop(name)
        if relu:
            gy = gy * (z > 0)
        grads[name + "_b"] = gy.sum(axis=(0, 2, 3))
        w = self.params[name + "_w"]
        grads[name + "_w"] = kernels.conv_gw(gy, ctx, w.shape)
        _, padding = self._layers[name]
        return kernels.conv_gx(gy, w, padding)

    def backward(self, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for the cached forward pass; takes the
        loss gradient with respect to the logits, shape (N, 1, H, W)."""
        if self._cache is None:
            raise RuntimeError("backward requires forward(..., train=True)")
        if self.logits is None or grad_logits.shape != self.logits.shape:
            raise ShapeError("gradient shape does not match logits")
        d = self.config.depth
        grads: dict[str, np.ndarray] = {}
        g = self._conv_relu_backward("head", grad_logits, grads, relu=False)
        g_skip = [None] * d
        for i in range(d):
            g = self._conv_relu_backward(f"dec{i}_conv2", g, grads)
            g = self._conv_relu_backward(f"dec{i}_conv1", g, grads)
            c_skip = self.params[f"dec{i}_conv1_w"].shape[1] // 2
            g_skip[i] = g[:, :c_skip]
            g = self._conv_relu_backward(
                f"dec{i}_up", np.ascontiguousarray(g[:, c_skip:]), grads)
            g = _upsample_backward(g)
        g = self._conv_relu_backward("bottleneck_conv2", g, grads)
        g = self._conv_relu_backward("bottleneck_conv1", g, grads)
        for i in reversed(range(d)):
            pool_in = self._cache.pop(f"pool{i}_in")
            g = ops.downsample_backward(pool_in, g)
            g = g + g_skip[i]
            g = self._conv_relu_backward(f"enc{i}_conv2", g, grads)
            g = self._conv_relu_backward(f"enc{i}_conv1", g, grads)
        self._cache = None
        return {name: grads[name] for name in self.params}

    # -- optimization --------------------------------------------------

    def sgd_step(self, grads: dict[str, np.ndarray], learning_rate: float,
                 momentum: float = 0.0):
        """Momentum SGD: v = momentum*v - lr*g; p += v."""
        if self._velocity is None:
            self._velocity = {k: np.zeros_like(v)
                              for k, v in self.params.items()}
        for name, p in self.params.items():
            v = self._velocity[name]
            v *= momentum
            v -= learning_rate * grads[name].astype(np.float32, copy=False)
            p += v


def _upsample_backward(gy: np.ndarray) -> np.ndarray:
    """Sum each 2x2 block of gy onto its upsample source element."""
    n, c, h2, w2 = gy.shape
    return gy.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))

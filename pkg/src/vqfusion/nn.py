"""Parameterized layers on top of the autodiff core.

Layers hold :class:`~vqfusion.autodiff.Parameter` objects and compose graph
ops in ``__call__``.  Initialization is Kaiming-uniform (fan-in) for weights
and zeros for biases; batch-norm starts at gamma=1, beta=0.  Every layer
draws its weights from the generator handed to the constructor, so model
construction order fully determines the initial state.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor

__all__ = [
    "Module",
    "Linear",
    "Conv1d",
    "Conv2d",
    "Conv3d",
    "BatchNorm",
    "kaiming_uniform",
]


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal container: named parameters, training-mode flag, submodules."""

    def __init__(self):
        self.training = True

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_parameters(self, prefix=""):
        """Yield (name, Parameter) pairs in deterministic attribute order."""
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}" if not prefix else f"{prefix}.{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def train(self):
        for m in self.modules():
            m.training = True
        return self

    def eval(self):
        for m in self.modules():
            m.training = False
        return self


class Linear(Module):
    def __init__(self, in_features, out_features, rng, dtype=np.float32, bias=True):
        super().__init__()
        self.weight = Parameter(
            kaiming_uniform(rng, (in_features, out_features), in_features, dtype)
        )
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out


class _ConvBase(Module):
    """Shared conv layer: weight (C_out, C_in, *k), optional per-channel bias."""

    rank = 0
    _conv = None

    def __init__(self, in_channels, out_channels, kernel, rng, stride=1, pad=0,
                 dtype=np.float32, bias=True, zero_init=False):
        super().__init__()
        kernel = (kernel,) * self.rank if isinstance(kernel, int) else tuple(kernel)
        if len(kernel) != self.rank:
            raise ShapeError(f"kernel must have {self.rank} extents, got {kernel}")
        fan_in = in_channels * int(np.prod(kernel))
        shape = (out_channels, in_channels) + kernel
        if zero_init:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = kaiming_uniform(rng, shape, fan_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        out = type(self)._conv(x, self.weight, self.stride, self.pad)
        if self.bias is not None:
            # broadcast over the channel axis of (N, C, *sp) or (C, *sp)
            batched = out.ndim == self.rank + 2
            bshape = (1, -1) + (1,) * self.rank if batched else (-1,) + (1,) * self.rank
            out = ad.add(out, ad.reshape(self.bias, bshape))
        return out


class Conv1d(_ConvBase):
    rank = 1

    @staticmethod
    def _conv(x, w, stride, pad):
        if stride != 1:
            raise ShapeError("temporal conv is stride-1 only")
        return ad.conv1d_temporal(x, w, pad)


class Conv2d(_ConvBase):
    rank = 2
    _conv = staticmethod(ad.conv2d)


class Conv3d(_ConvBase):
    rank = 3
    _conv = staticmethod(ad.conv3d)


class BatchNorm(Module):
    """Per-channel batch normalization with running statistics.

    Training mode normalizes with batch statistics over every axis except
    channel (axis 1 of a batched input) and updates the running estimates
    (momentum 0.1, unbiased variance, the usual convention).  Eval mode
    normalizes with the running estimates only, so a single video can be
    scored without a batch.
    """

    def __init__(self, num_features, rng=None, dtype=np.float32, eps=1e-5, momentum=0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(num_features, dtype=dtype))
        self.beta = Parameter(np.zeros(num_features, dtype=dtype))
        # running stats ride along as non-trainable parameters so checkpoints
        # capture them without special cases
        self.running_mean = Parameter(np.zeros(num_features, dtype=dtype), trainable=False)
        self.running_var = Parameter(np.ones(num_features, dtype=dtype), trainable=False)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor) -> Tensor:
        axes = (0,) + tuple(range(2, x.ndim))
        if self.training:
            out = ad.batch_norm(x, self.gamma, self.beta, eps=self.eps, axes=axes)
            count = int(np.prod([x.shape[ax] for ax in axes]))
            mean = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            unbiased = var * (count / (count - 1)) if count > 1 else var
            m = self.momentum
            self.running_mean.data = ((1 - m) * self.running_mean.data + m * mean).astype(x.dtype)
            self.running_var.data = ((1 - m) * self.running_var.data + m * unbiased).astype(x.dtype)
            return out
        bshape = tuple(x.shape[i] if i == 1 else 1 for i in range(x.ndim))
        centered = ad.sub(x, ad.reshape(self.running_mean, bshape))
        denom = ad.sqrt(ad.add(ad.reshape(self.running_var, bshape), Tensor(np.asarray(self.eps, dtype=x.dtype))))
        normalized = ad.div(centered, denom)
        return ad.add(
            ad.mul(normalized, ad.reshape(self.gamma, bshape)),
            ad.reshape(self.beta, bshape),
        )

"""Network layers with hand-derived reverse-mode gradients.

Every layer exposes ``forward(x, train=False, rng=None)`` and
``backward(grad_out) -> grad_in``; trainable layers also carry ``params``
and ``grads`` lists (same order, same shapes). Arrays are float64
throughout, activations are ``(batch, channels, *spatial)``.

Backward calls consume the cache left by the most recent forward call.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ParameterError


def he_uniform(rng, shape, fan_in):
    """Uniform init on [-b, b] with b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv:
    """Cross-correlation with odd kernels, stride 1, zero same-padding.

    Weights are (out_ch, in_ch, *kernel); input (batch, in_ch, *spatial)
    keeps its spatial extents.
    """

    def __init__(self, dim, in_channels, out_channels, kernel=3, rng=None):
        if dim not in (2, 3):
            raise ParameterError("convolution supports 2 or 3 spatial axes")
        if kernel % 2 != 1:
            raise ParameterError("kernel extent must be odd")
        if rng is None:
            rng = np.random.default_rng()
        self.dim = dim
        self.kernel = kernel
        fan_in = in_channels * kernel**dim
        self.weight = he_uniform(
            rng, (out_channels, in_channels) + (kernel,) * dim, fan_in
        )
        self.bias = np.zeros(out_channels)
        self.params = [self.weight, self.bias]
        self.grads = [np.zeros_like(self.weight), np.zeros_like(self.bias)]
        self._windows = None

    def _pad(self, x):
        p = self.kernel // 2
        width = [(0, 0), (0, 0)] + [(p, p)] * self.dim
        return np.pad(x, width)

    def _correlate(self, x, kernels):
        # windows: (batch, ch, *spatial, *kernel); contract ch + kernel axes
        spatial_axes = tuple(range(2, 2 + self.dim))
        win = sliding_window_view(self._pad(x), (self.kernel,) * self.dim, spatial_axes)
        win_axes = (1,) + tuple(range(2 + self.dim, 2 + 2 * self.dim))
        ker_axes = tuple(range(1, 2 + self.dim))
        out = np.tensordot(win, kernels, axes=(win_axes, ker_axes))
        # (batch, *spatial, out_ch) -> (batch, out_ch, *spatial)
        return np.moveaxis(out, -1, 1), win

    def forward(self, x, train=False, rng=None):
        out, self._windows = self._correlate(x, self.weight)
        return out + self.bias.reshape((1, -1) + (1,) * self.dim)

    def backward(self, grad_out):
        batch_spatial = (0,) + tuple(range(2, 2 + self.dim))
        self.grads[1][...] = grad_out.sum(axis=batch_spatial)
        # dW[o, c, u] = sum_{b, s} grad[b, o, s] * x_pad[b, c, s + u]
        self.grads[0][...] = np.tensordot(
            grad_out, self._windows, axes=(batch_spatial, batch_spatial)
        )
        # grad wrt input: full correlation with the flipped kernel,
        # channels swapped to (in_ch, out_ch, *kernel)
        flipped = np.flip(self.weight, axis=tuple(range(2, 2 + self.dim)))
        grad_in, _ = self._correlate(grad_out, np.swapaxes(flipped, 0, 1))
        return grad_in

    def __repr__(self):
        out_ch, in_ch = self.weight.shape[:2]
        return f"Conv({self.dim}d, {in_ch}->{out_ch}, k={self.kernel})"


class ReLU:
    params = ()
    grads = ()

    def __init__(self):
        self._mask = None

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        return np.where(self._mask, grad_out, 0.0)

    def __repr__(self):
        return "ReLU()"


class MaxPool:
    """2^d max pooling with stride 2; odd extents round up (ceil mode).

    Ragged edges are padded with -inf so the padding never wins. Ties
    route the gradient to the first maximal position only.
    """

    params = ()
    grads = ()

    def __init__(self, dim):
        if dim not in (2, 3):
            raise ParameterError("pooling supports 2 or 3 spatial axes")
        self.dim = dim
        self._cache = None

    def _window_split(self, x):
        spatial = x.shape[2:]
        out = tuple(-(-n // 2) for n in spatial)
        pad = [(0, 0), (0, 0)] + [(0, 2 * o - n) for o, n in zip(out, spatial)]
        xp = np.pad(x, pad, constant_values=-np.inf)
        # (b, c, o1, 2, o2, 2, ...) -> (b, c, o1, o2, ..., 2^d)
        split = xp.reshape(
            x.shape[:2] + tuple(v for o in out for v in (o, 2))
        )
        order = (0, 1) + tuple(2 + 2 * i for i in range(self.dim)) + tuple(
            3 + 2 * i for i in range(self.dim)
        )
        windows = split.transpose(order).reshape(
            x.shape[:2] + out + (2**self.dim,)
        )
        return windows, out, spatial

    def forward(self, x, train=False, rng=None):
        windows, out, spatial = self._window_split(x)
        idx = windows.argmax(axis=-1)
        self._cache = (idx, out, spatial, x.shape[:2])
        return np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad_out):
        idx, out, spatial, lead = self._cache
        windows = np.zeros(lead + out + (2**self.dim,))
        np.put_along_axis(windows, idx[..., None], grad_out[..., None], axis=-1)
        order = (0, 1) + tuple(2 + 2 * i for i in range(self.dim)) + tuple(
            3 + 2 * i for i in range(self.dim)
        )
        padded = (
            windows.reshape(lead + out + (2,) * self.dim)
            .transpose(np.argsort(order))
            .reshape(lead + tuple(2 * o for o in out))
        )
        return padded[(slice(None), slice(None)) + tuple(slice(0, n) for n in spatial)]

    def __repr__(self):
        return f"MaxPool({self.dim}d)"


class Flatten:
    params = ()
    grads = ()

    def __init__(self):
        self._shape = None

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def __repr__(self):
        return "Flatten()"


class Dense:
    """Affine map on (batch, n_in) activations."""

    def __init__(self, n_in, n_out, rng=None):
        if rng is None:
            rng = np.random.default_rng()
        self.weight = he_uniform(rng, (n_in, n_out), n_in)
        self.bias = np.zeros(n_out)
        self.params = [self.weight, self.bias]
        self.grads = [np.zeros_like(self.weight), np.zeros_like(self.bias)]
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad_out):
        self.grads[0][...] = self._x.T @ grad_out
        self.grads[1][...] = grad_out.sum(axis=0)
        return grad_out @ self.weight.T

    def __repr__(self):
        return f"Dense({self.weight.shape[0]}->{self.weight.shape[1]})"


class Dropout:
    """Inverted dropout: active only when train=True, identity otherwise."""

    params = ()
    grads = ()

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ParameterError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ParameterError("training-mode dropout needs a generator")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def __repr__(self):
        return f"Dropout({self.rate})"

"""Minimal reverse-mode automatic differentiation on numpy arrays.

Everything is float64. A Tensor wraps an ndarray plus closures that
push gradients to its parents; backward() runs the closures in reverse
topological order. The op set is exactly what the separation models
need, nothing more. Every op's gradient is checked against central
finite differences in the test suite.
"""

import numpy as np

from .dsp import StftConfig, synthesis_norm


def _unbroadcast(grad, shape):
    """Sum grad down to the given shape after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and
                 grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn",
                 "name")

    def __init__(self, data, requires_grad=False, parents=(),
                 backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad
                                                  for p in parents)
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for parent in node.parents:
                    if id(parent) not in seen and parent.requires_grad:
                        stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, grad in zip(node.parents,
                                    node.backward_fn(node.grad)):
                if grad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += grad

    # arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        return Tensor(self.data + other.data, parents=(self, other),
                      backward_fn=lambda g: (
                          _unbroadcast(g, self.shape),
                          _unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, parents=(self,),
                      backward_fn=lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        return Tensor(self.data - other.data, parents=(self, other),
                      backward_fn=lambda g: (
                          _unbroadcast(g, self.shape),
                          _unbroadcast(-g, other.shape)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        return Tensor(self.data * other.data, parents=(self, other),
                      backward_fn=lambda g: (
                          _unbroadcast(g * other.data, self.shape),
                          _unbroadcast(g * self.data, other.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return Tensor(self.data / other.data, parents=(self, other),
                      backward_fn=lambda g: (
                          _unbroadcast(g / other.data, self.shape),
                          _unbroadcast(-g * self.data / other.data ** 2,
                                       other.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent
        return Tensor(out_data, parents=(self,),
                      backward_fn=lambda g:
                          (g * exponent * self.data ** (exponent - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)

        def backward(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            return (_unbroadcast(ga, self.shape),
                    _unbroadcast(gb, other.shape))

        return Tensor(self.data @ other.data, parents=(self, other),
                      backward_fn=backward)

    def __getitem__(self, key):
        basic = all(isinstance(k, (int, np.integer, slice, type(None),
                                   type(Ellipsis)))
                    for k in (key if isinstance(key, tuple) else (key,)))

        def backward(g):
            full = np.zeros_like(self.data)
            if basic:
                full[key] += g
            else:
                np.add.at(full, key, g)  # advanced indices may repeat
            return (full,)

        return Tensor(self.data[key], parents=(self,), backward_fn=backward)

    # shape ops

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor(self.data.reshape(shape), parents=(self,),
                      backward_fn=lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor(self.data.transpose(axes), parents=(self,),
                      backward_fn=lambda g: (g.transpose(inverse),))

    # reductions

    def sum(self, axis=None, keepdims=False):
        def backward(g):
            if axis is None:
                return (np.full_like(self.data, 1.0) * g,)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                      parents=(self,), backward_fn=backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # elementwise nonlinearities

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))
        return Tensor(out_data, parents=(self,),
                      backward_fn=lambda g: (g * out_data * (1 - out_data),))

    def tanh(self):
        out_data = np.tanh(self.data)
        return Tensor(out_data, parents=(self,),
                      backward_fn=lambda g: (g * (1 - out_data ** 2),))

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor(out_data, parents=(self,),
                      backward_fn=lambda g: (g * out_data,))

    def log(self):
        return Tensor(np.log(self.data), parents=(self,),
                      backward_fn=lambda g: (g / self.data,))

    def sqrt(self):
        out_data = np.sqrt(self.data)
        return Tensor(out_data, parents=(self,),
                      backward_fn=lambda g: (g * 0.5 / out_data,))

    def clip(self, lo, hi):
        inside = (self.data > lo) & (self.data < hi)
        return Tensor(np.clip(self.data, lo, hi), parents=(self,),
                      backward_fn=lambda g: (g * inside,))

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            return (out_data * (g - inner),)

        return Tensor(out_data, parents=(self,), backward_fn=backward)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  parents=tensors, backward_fn=backward)


def stack(tensors, axis=0):
    tensors = tuple(tensors)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor(np.stack([t.data for t in tensors], axis=axis),
                  parents=tensors, backward_fn=backward)


def trailing_mean(x, window):
    """
    Causal running mean over the leading (time) axis: element t averages
    inputs max(0, t - window + 1) .. t. window=None averages all history.
    """
    num = x.shape[0]
    cum = np.cumsum(x.data, axis=0)
    if window is None or window >= num:
        counts = np.arange(1, num + 1, dtype=np.float64)
        out_data = cum / counts.reshape((-1,) + (1,) * (x.ndim - 1))

        def backward(g):
            q = g / counts.reshape((-1,) + (1,) * (x.ndim - 1))
            # d out_t / d x_u = 1/(t+1) for u <= t
            return (np.cumsum(q[::-1], axis=0)[::-1],)

        return Tensor(out_data, parents=(x,), backward_fn=backward)

    if window < 1:
        raise ValueError(f"window must be at least 1, got {window}")
    windowed = cum.copy()
    windowed[window:] -= cum[:-window]
    counts = np.minimum(np.arange(1, num + 1, dtype=np.float64), window)
    shape = (-1,) + (1,) * (x.ndim - 1)
    out_data = windowed / counts.reshape(shape)

    def backward(g):
        q = g / counts.reshape(shape)
        c = np.cumsum(q, axis=0)
        # grad_u = sum_{t=u}^{u+window-1} q_t
        grad = c[window - 1:].copy()
        pad = np.broadcast_to(c[-1], (num - grad.shape[0],) + c.shape[1:])
        grad = np.concatenate([grad, pad], axis=0)
        grad[1:] -= c[:-1]
        return (grad,)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def overlap_add_synthesis(real, imag, cfg=None, length=None):
    """
    Differentiable inverse STFT of one channel
    Arguments:
        real, imag: T x F tensors, the half-spectrum frames
        length: output samples (required)
    Return:
        1D tensor of length samples, identical to dsp.istft applied to
        real + j imag
    """
    cfg = cfg or StftConfig()
    if length is None:
        raise ValueError("length is required")
    num_frames, num_bins = real.shape
    if num_bins != cfg.num_bins:
        raise ValueError(f"expected {cfg.num_bins} bins, got {num_bins}")
    fft_size, hop = cfg.fft_size, cfg.hop
    pad = fft_size // 2
    window = cfg.synthesis_window()
    norm = np.maximum(synthesis_norm(num_frames, cfg), 1e-12)
    total = (num_frames - 1) * hop + fft_size

    spectrum = real.data + 1j * imag.data
    frames = np.fft.irfft(spectrum, n=fft_size, axis=-1) * window
    signal = np.zeros(total)
    for t in range(num_frames):
        signal[t * hop:t * hop + fft_size] += frames[t]
    signal = signal / norm
    out_data = signal[pad:pad + length]
    if out_data.shape[0] != length:
        raise ValueError(f"length {length} exceeds the synthesized span")

    # spectral weights of the irfft adjoint: interior bins count twice
    scale = np.full(num_bins, 2.0 / fft_size)
    scale[0] = 1.0 / fft_size
    if fft_size % 2 == 0:
        scale[-1] = 1.0 / fft_size

    def backward(g):
        g_total = np.zeros(total)
        g_total[pad:pad + length] = g
        g_total = g_total / norm
        segments = np.stack([g_total[t * hop:t * hop + fft_size]
                             for t in range(num_frames)])
        spectra = np.fft.rfft(segments * window, axis=-1)
        grad_re = spectra.real * scale
        grad_im = spectra.imag * scale
        if fft_size % 2 == 0:
            grad_im[:, 0] = 0.0
            grad_im[:, -1] = 0.0
        return (grad_re, grad_im)

    return Tensor(out_data, parents=(real, imag), backward_fn=backward)


def finite_difference_grad(fn, tensors, index, epsilon=1e-5, coords=None,
                           rng=None):
    """
    Central-difference gradient of a scalar-valued fn at tensors[index]
    Arguments:
        fn: callable taking the tensors and returning a scalar Tensor
        coords: number of randomly probed coordinates (None = all)
    Return:
        (numeric_grads, flat_indices) for the probed coordinates
    """
    target = tensors[index]
    flat = target.data.reshape(-1)
    if coords is None:
        probe = np.arange(flat.size)
    else:
        rng = rng or np.random.default_rng(0)
        probe = rng.choice(flat.size, size=min(coords, flat.size),
                           replace=False)
    grads = np.empty(len(probe))
    for n, i in enumerate(probe):
        original = flat[i]
        flat[i] = original + epsilon
        hi = float(fn(*tensors).data)
        flat[i] = original - epsilon
        lo = float(fn(*tensors).data)
        flat[i] = original
        grads[n] = (hi - lo) / (2 * epsilon)
    return grads, probe


def check_gradient(fn, tensors, index, epsilon=1e-5, coords=None, rng=None):
    """
    Max relative error between analytic and finite-difference gradients
    Return:
        worst relative error over the probed coordinates
    """
    for t in tensors:
        t.grad = None
    out = fn(*tensors)
    out.backward()
    analytic = tensors[index].grad.reshape(-1)
    numeric, probe = finite_difference_grad(fn, tensors, index,
                                            epsilon=epsilon, coords=coords,
                                            rng=rng)
    scale = np.maximum(np.abs(numeric), np.abs(analytic[probe]))
    denom = np.maximum(scale, 1e-8)
    return np.max(np.abs(analytic[probe] - numeric) / denom)

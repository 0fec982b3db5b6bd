"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` holds a value array, an optional gradient, and the closure
that pushes its gradient back to its parents. Operations broadcast like numpy,
so a whole minibatch lives in one graph.

Conventions
-----------
* ``abs`` has subgradient 0 at 0.
* ``modulus`` (``sqrt(a**2 + b**2)``) and ``l2_norm_rows`` with ``eps=0`` have
  gradient 0 where the value is exactly 0.
* ``backward`` may be called once per graph root.
"""

import numpy as np

__all__ = [
    "Tensor", "as_tensor", "backward", "zero_grad", "grad_check",
    "add", "sub", "mul", "div", "neg", "matmul", "affine", "conv1d",
    "relu", "leaky_relu", "tanh", "exp", "log", "sqrt", "square", "power", "abs",
    "sum", "mean", "concat", "slice", "reshape", "frame_extract",
    "overlap_add", "l2_norm_rows", "modulus", "cos_transform",
    "sin_transform", "fourier_modulus",
]

_builtin_sum = sum
_builtin_abs = abs
_builtin_slice = slice


class Tensor:
    """A node in the differentiation graph.

    Parameters
    ----------
    data : array_like
        Values, stored as a float64 array.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad``.
    name : str, optional
        Stable name used by optimizers and checkpoints.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice(self, index)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _node(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.name = None
    out._parents = ()
    out._backward = None
    out._backward_done = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    out.op = op
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    # out-of-place so gradient arrays shared between parents never alias
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    Raises
    ------
    ValueError
        If ``loss`` is not a scalar.
    RuntimeError
        If ``backward`` was already run from this root.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_done:
        raise RuntimeError("backward already ran on this graph; rebuild it")
    loss._backward_done = True
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    # intermediate gradients must start fresh for this pass
    for node in order:
        if node._backward is not None:
            node.grad = None
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        _accumulate(a, g)
        _accumulate(b, g)
    return _node(a.data + b.data, (a, b), _bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)
    return _node(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)
    return _node(a.data * b.data, (a, b), _bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def _bw(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * out / b.data)
    return _node(out, (a, b), _bw, "div")


def neg(a):
    a = as_tensor(a)

    def _bw(g):
        _accumulate(a, -g)
    return _node(-a.data, (a,), _bw, "neg")


def square(a):
    a = as_tensor(a)

    def _bw(g):
        _accumulate(a, 2.0 * a.data * g)
    return _node(a.data * a.data, (a,), _bw, "square")


# -- linear maps -------------------------------------------------------------

def matmul(a, b):
    """Matrix product with numpy batching semantics (both operands >= 2-D,
    or ``b`` 1-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def _bw(g):
        if b.ndim == 1:
            if a.requires_grad:
                _accumulate(a, g[..., None] * b.data)
            if b.requires_grad:
                _accumulate(b, (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0))
            return
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.outer(a.data, g)
            elif b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, gb)
    return _node(out, (a, b), _bw, "matmul")


def affine(x, w, b):
    """``x @ w + b`` over the last axis of ``x``."""
    return add(matmul(x, w), b)


def conv1d(x, w, b=None):
    """Stride-1, same-padded 1-D convolution in channels-last layout.

    Parameters
    ----------
    x : Tensor, shape (batch, length, in_channels)
    w : Tensor, shape (kernel, in_channels, out_channels); kernel must be odd
    b : Tensor, shape (out_channels,), optional
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError("conv1d expects x (B, L, Cin) and w (K, Cin, Cout)")
    k, cin, cout = w.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel size must be odd, got {k}")
    if x.shape[2] != cin:
        raise ValueError(f"conv1d channel mismatch: x has {x.shape[2]}, w expects {cin}")
    nb, length, _ = x.shape
    if k == 1:
        y = matmul(x, reshape(w, (cin, cout)))
        return y if b is None else add(y, b)
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([xp[:, j:j + length, :] for j in range(k)], axis=2)
    wmat = w.data.reshape(k * cin, cout)
    out = cols @ wmat

    def _bw(g):
        if w.requires_grad:
            gw = cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)
            _accumulate(w, gw.reshape(k, cin, cout))
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(nb, length, k, cin)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + length, :] += gcols[:, :, j, :]
            _accumulate(x, gxp[:, pad:pad + length, :])
    y = _node(out, (x, w), _bw, "conv1d")
    if b is not None:
        y = add(y, b)
    return y


# -- pointwise nonlinearities -------------------------------------------------

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def _bw(g):
        _accumulate(x, g * mask)
    return _node(np.where(mask, x.data, 0.0), (x,), _bw, "relu")


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)

    def _bw(g):
        _accumulate(x, g * factor)
    return _node(x.data * factor, (x,), _bw, "leaky_relu")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def _bw(g):
        _accumulate(x, g * (1.0 - out * out))
    return _node(out, (x,), _bw, "tanh")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def _bw(g):
        _accumulate(x, g * out)
    return _node(out, (x,), _bw, "exp")


def log(x):
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("log of a negative value")
    with np.errstate(divide="ignore"):
        out = np.log(x.data)

    def _bw(g):
        _accumulate(x, g / x.data)
    return _node(out, (x,), _bw, "log")


def sqrt(x):
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("sqrt of a negative value")
    out = np.sqrt(x.data)

    def _bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            _accumulate(x, np.where(out > 0, g / (2.0 * out), 0.0))
    return _node(out, (x,), _bw, "sqrt")


def abs(x):
    x = as_tensor(x)
    sign = np.sign(x.data)

    def _bw(g):
        _accumulate(x, g * sign)
    return _node(np.abs(x.data), (x,), _bw, "abs")


def power(x, p):
    """``x ** p`` for ``x >= 0``; gradient taken as 0 at ``x == 0``."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("power of a negative base")
    out = x.data ** p

    def _bw(g):
        pos = x.data > 0
        safe = np.where(pos, x.data, 1.0)
        _accumulate(x, np.where(pos, g * p * safe ** (p - 1.0), 0.0))
    return _node(out, (x,), _bw, "power")


def modulus(a, b):
    """Elementwise ``sqrt(a**2 + b**2)``; zero gradient where the value is 0."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.hypot(a.data, b.data)
    safe = np.where(out > 0, out, 1.0)

    def _bw(g):
        scale = np.where(out > 0, g / safe, 0.0)
        _accumulate(a, scale * a.data)
        _accumulate(b, scale * b.data)
    return _node(out, (a, b), _bw, "modulus")


# -- reductions and shape ops --------------------------------------------------

def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))
    return _node(out, (x,), _bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod(
        [x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [_builtin_slice(None)] * g.ndim
                index[axis] = _builtin_slice(lo, hi)
                _accumulate(t, g[tuple(index)])
    return _node(out, tensors, _bw, "concat")


def slice(x, index):
    """Basic or advanced indexing; the backward scatters with ``np.add.at``."""
    x = as_tensor(x)
    out = x.data[index]

    def _bw(g):
        gx = np.zeros_like(x.data)
        if _is_basic_index(index):
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        _accumulate(x, gx)
    return _node(np.array(out, dtype=np.float64), (x,), _bw, "slice")


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, type(Ellipsis), type(None), _builtin_slice))
               for p in parts)


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def _bw(g):
        _accumulate(x, g.reshape(x.shape))
    return _node(out, (x,), _bw, "reshape")


def frame_extract(x, k, hop):
    """Split the last axis into frames ``x[..., t*hop : t*hop + k]``.

    Returns shape ``(..., T, k)`` with ``T = (N - k) // hop + 1``.
    """
    x = as_tensor(x)
    n = x.shape[-1]
    if k > n:
        raise ValueError(f"frame length {k} exceeds signal length {n}")
    n_frames = (n - k) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=-1)
    out = np.ascontiguousarray(view[..., ::hop, :][..., :n_frames, :])

    def _bw(g):
        _accumulate(x, _overlap_add(g, hop, n))
    return _node(out, (x,), _bw, "frame_extract")


def _overlap_add(frames, hop, length):
    k = frames.shape[-1]
    out = np.zeros(frames.shape[:-2] + (length,))
    for t in range(frames.shape[-2]):
        out[..., t * hop:t * hop + k] += frames[..., t, :]
    return out


def overlap_add(frames, hop):
    """Sum frames ``(..., T, k)`` at offsets ``t*hop``; adjoint of
    :func:`frame_extract`."""
    frames = as_tensor(frames)
    n_frames, k = frames.shape[-2:]
    length = (n_frames - 1) * hop + k
    out = _overlap_add(frames.data, hop, length)

    def _bw(g):
        view = np.lib.stride_tricks.sliding_window_view(g, k, axis=-1)
        _accumulate(frames, view[..., ::hop, :][..., :n_frames, :])
    return _node(out, (frames,), _bw, "overlap_add")


def l2_norm_rows(x, eps=1e-12):
    """Euclidean norm over the last axis, ``sqrt(sum(x**2) + eps)``."""
    x = as_tensor(x)
    out = np.sqrt(np.einsum("...i,...i->...", x.data, x.data) + eps)
    safe = np.where(out > 0, out, 1.0)

    def _bw(g):
        scale = np.where(out > 0, g / safe, 0.0)
        _accumulate(x, scale[..., None] * x.data)
    return _node(out, (x,), _bw, "l2_norm_rows")


# -- overcomplete cosine / sine projections ------------------------------------

def _projection_adjoint(g, n_fft, k, real_part):
    # sum_i g_i cos(2 pi i n / n_fft) (or sin) for n < k, via one inverse rfft
    spec = g.astype(np.complex128) if real_part else (-1j) * g
    spec = np.array(spec, copy=True)
    spec[..., 1:-1] *= 0.5
    if not real_part:
        spec[..., 0] = 0.0
        spec[..., -1] = 0.0
    full = np.fft.irfft(spec, n=n_fft, axis=-1) * n_fft
    return full[..., :k]


def _check_projection(frames, n_fft):
    k = frames.shape[-1]
    if n_fft < k or n_fft % 2:
        raise ValueError(f"n_fft must be even and >= frame length {k}, got {n_fft}")


def cos_transform(frames, n_fft):
    """``C_i = sum_n frames[n] cos(2 pi i n / n_fft)`` for ``i = 0..n_fft/2``.

    With ``n_fft = m*k`` this is the cosine half of an m-times overcomplete
    Fourier basis; computed by a zero-padded real FFT.
    """
    frames = as_tensor(frames)
    _check_projection(frames, n_fft)
    k = frames.shape[-1]
    out = np.fft.rfft(frames.data, n=n_fft, axis=-1).real

    def _bw(g):
        _accumulate(frames, _projection_adjoint(g, n_fft, k, real_part=True))
    return _node(out, (frames,), _bw, "cos_transform")


def sin_transform(frames, n_fft):
    """``S_i = sum_n frames[n] sin(2 pi i n / n_fft)`` for ``i = 0..n_fft/2``."""
    frames = as_tensor(frames)
    _check_projection(frames, n_fft)
    k = frames.shape[-1]
    out = -np.fft.rfft(frames.data, n=n_fft, axis=-1).imag

    def _bw(g):
        _accumulate(frames, _projection_adjoint(g, n_fft, k, real_part=False))
    return _node(out, (frames,), _bw, "sin_transform")


def fourier_modulus(frames, n_fft):
    """``modulus(cos_transform(f), sin_transform(f))`` sharing one FFT."""
    frames = as_tensor(frames)
    _check_projection(frames, n_fft)
    k = frames.shape[-1]
    spectrum = np.fft.rfft(frames.data, n=n_fft, axis=-1)
    out = np.abs(spectrum)
    safe = np.where(out > 0, out, 1.0)

    def _bw(g):
        # chain through C = Re X and S = -Im X, then one adjoint transform
        scaled = np.where(out > 0, g / safe, 0.0) * spectrum
        scaled[..., 1:-1] *= 0.5
        scaled[..., 0] = scaled[..., 0].real
        scaled[..., -1] = scaled[..., -1].real
        full = np.fft.irfft(scaled, n=n_fft, axis=-1) * n_fft
        _accumulate(frames, full[..., :k])
    return _node(out, (frames,), _bw, "fourier_modulus")


# -- verification -------------------------------------------------------------

def grad_check(f, x, h=1e-5, indices=None):
    """Compare reverse-mode gradients of scalar ``f(x)`` to central differences.

    Parameters
    ----------
    f : callable
        Maps a Tensor to a scalar Tensor. Called repeatedly.
    x : array_like or Tensor
        Point at which to check.
    h : float
        Finite-difference step.
    indices : iterable of int, optional
        Flat coordinates to probe; all coordinates by default.

    Returns
    -------
    float
        Max over coordinates of ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base, requires_grad=True)
    out = f(probe)
    backward(out)
    analytic = np.zeros_like(base) if probe.grad is None else probe.grad
    flat = base.ravel()
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        shifted = flat.copy()
        shifted[i] += h
        f_plus = f(Tensor(shifted.reshape(base.shape))).item()
        shifted[i] -= 2 * h
        f_minus = f(Tensor(shifted.reshape(base.shape))).item()
        numeric = (f_plus - f_minus) / (2 * h)
        a = analytic.ravel()[i]
        err = _builtin_abs(a - numeric) / max(_builtin_abs(a), _builtin_abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst

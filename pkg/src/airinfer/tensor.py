"""Dense tensors with tape-based reverse-mode differentiation.

Values are 64-bit floats, or complex128 when the complex flag is set.
Real and complex tensors never mix implicitly: promotion goes through
``to_complex`` / ``view_as_complex`` and demotion through ``real``.

Gradients of complex tensors follow the convention
``g = dL/dRe(z) + i * dL/dIm(z)`` for a real-valued loss L, so a
C-linear map ``y = A x`` backpropagates ``g_x = A^H g_y``.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import fourier
from .errors import ConfigError, DimensionError, NumericError, UsageError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            arr = arr.astype(np.complex128, copy=False)
        else:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._bwd: Callable | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_complex(self):
        return np.iscomplexobj(self.data)

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, complex={self.is_complex}, grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar loss node")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None:
                node._bwd(node.grad)
                node.grad = None  # interior grads are not retained

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        data = self.data[key]

        def bwd(g):
            gz = np.zeros_like(self.data)
            gz[key] = g
            _acc(self, gz)

        return _op(data, (self,), bwd)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)
        src = self.data.shape

        def bwd(g):
            _acc(self, g.reshape(src))

        return _op(data, (self,), bwd)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def zero_grads(params: Dict[str, Tensor] | Iterable[Tensor]):
    vals = params.values() if isinstance(params, dict) else params
    for p in vals:
        p.grad = None


# -- machinery ----------------------------------------------------------------


def _toposort(root: Tensor):
    order = []
    seen = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        pushed = False
        for p in it:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                pushed = True
                break
        if not pushed:
            order.append(node)
            stack.pop()
    return order


def _op(data, parents: Sequence[Tensor], bwd) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._bwd = bwd
    return out


def _acc(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None and like.is_complex and not np.iscomplexobj(arr):
        arr = arr.astype(np.complex128)
    return Tensor(arr)


def _check_mix(a: Tensor, b: Tensor, op: str):
    if a.is_complex != b.is_complex:
        raise TypeError(f"{op}: real/complex tensors never mix implicitly; promote explicitly")


def _conj_t(x: np.ndarray) -> np.ndarray:
    x = x.swapaxes(-1, -2)
    return np.conj(x) if np.iscomplexobj(x) else x


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_mix(a, b, "add")
    data = a.data + b.data

    def bwd(g):
        _acc(a, _sum_to(g, a.data.shape))
        _acc(b, _sum_to(g, b.data.shape))

    return _op(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_mix(a, b, "mul")
    data = a.data * b.data

    def bwd(g):
        _acc(a, _sum_to(g * np.conj(b.data) if a.is_complex else g * b.data, a.data.shape))
        _acc(b, _sum_to(g * np.conj(a.data) if b.is_complex else g * a.data, b.data.shape))

    return _op(data, (a, b), bwd)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_mix(a, b, "div")
    data = a.data / b.data

    def bwd(g):
        inv = 1.0 / b.data
        ga = g * (np.conj(inv) if a.is_complex else inv)
        gb = -g * (np.conj(a.data * inv * inv) if b.is_complex else a.data * inv * inv)
        _acc(a, _sum_to(ga, a.data.shape))
        _acc(b, _sum_to(gb, b.data.shape))

    return _op(data, (a, b), bwd)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(x, np.broadcast_to(g, x.data.shape))

    return _op(data, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def tabs(x: Tensor) -> Tensor:
    """Elementwise absolute value of a real tensor; subgradient 0 at 0."""
    if x.is_complex:
        raise TypeError("abs is defined for real tensors; use soft_threshold for complex shrinkage")
    data = np.abs(x.data)

    def bwd(g):
        _acc(x, g * np.sign(x.data))

    return _op(data, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def bwd(g):
        _acc(x, g * (1.0 - data * data))

    return _op(data, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def bwd(g):
        _acc(x, g * data)

    return _op(data, (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    data = np.sqrt(x.data)

    def bwd(g):
        _acc(x, g * (0.5 / data))

    return _op(data, (x,), bwd)


# -- shape ops ------------------------------------------------------------------


def swap_last(x: Tensor) -> Tensor:
    data = x.data.swapaxes(-1, -2)

    def bwd(g):
        _acc(x, g.swapaxes(-1, -2))

    return _op(data, (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    for t in ts[1:]:
        _check_mix(ts[0], t, "concat")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

    def bwd(g):
        for t, part in zip(ts, np.split(g, sizes, axis=axis)):
            _acc(t, part)

    return _op(data, tuple(ts), bwd)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array; backward scatter-adds."""
    idx = np.asarray(indices)
    ax = axis % x.data.ndim
    data = np.take(x.data, idx, axis=ax)

    def bwd(g):
        gz = np.zeros_like(x.data)
        gm = np.moveaxis(gz, ax, 0)
        gmv = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(gm, idx, gmv)
        _acc(x, gz)

    return _op(data, (x,), bwd)


def mask_rows(x: Tensor, mask: np.ndarray, token: Tensor) -> Tensor:
    """Replace rows of the node axis (axis 1) selected by ``mask`` with ``token``.

    x has shape (B, N, ..., D) and token shape (D,); the token broadcasts
    over any middle axes. The forward copies, so perturbing masked rows of
    x can never reach the output.
    """
    mask = np.asarray(mask, dtype=bool)
    data = x.data.copy()
    data[:, mask] = token.data

    def bwd(g):
        gx = g.copy()
        gx[:, mask] = 0.0
        _acc(x, gx)
        _acc(token, g[:, mask].reshape(-1, token.data.shape[-1]).sum(axis=0))

    return _op(data, (x, token), bwd)


# -- linear algebra ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    _check_mix(a, b, "matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}")

    if b.data.ndim == 2 and a.data.ndim > 2:
        # fully-connected case: collapse batch axes into one large GEMM
        lead = a.data.shape[:-1]
        a2 = a.data.reshape(-1, a.data.shape[-1])
        data = (a2 @ b.data).reshape(lead + (b.data.shape[-1],))

        def bwd(g):
            g2 = g.reshape(-1, g.shape[-1])
            _acc(a, (g2 @ _conj_t(b.data)).reshape(a.data.shape))
            _acc(b, _conj_t(a2) @ g2)

        return _op(data, (a, b), bwd)

    data = a.data @ b.data

    def bwd(g):
        _acc(a, _sum_to(g @ _conj_t(b.data), a.data.shape))
        _acc(b, _sum_to(_conj_t(a.data) @ g, b.data.shape))

    return _op(data, (a, b), bwd)


def sparse_pool(x: Tensor, matrix: sp.spmatrix, groups: int) -> Tensor:
    """Pool node features with a constant sparse (N*G, N) matrix.

    x: (B, N, C) -> (B, N, G, C). Row i*G+g of the matrix holds the
    (already normalized) weights of region g around node i.
    """
    bsz, n, c = x.data.shape
    flat = x.data.transpose(1, 0, 2).reshape(n, bsz * c)
    pooled = matrix @ flat
    data = pooled.reshape(n, groups, bsz, c).transpose(2, 0, 1, 3)
    mt = getattr(matrix, "_t_csr", None)
    if mt is None:
        mt = matrix._t_csr = matrix.T.tocsr()  # cached; matrices are immutable here

    def bwd(g):
        g2 = g.transpose(1, 2, 0, 3).reshape(n * groups, bsz * c)
        back = mt @ g2
        _acc(x, back.reshape(n, bsz, c).transpose(1, 0, 2))

    return _op(data, (x,), bwd)


# -- nonlinear building blocks ----------------------------------------------------


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, max-subtracted for stability."""
    if np.isnan(x.data).any():
        raise NumericError("softmax received NaN input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _acc(x, y * (g - dot))

    return _op(y, (x,), bwd)


def soft_threshold(z: Tensor, lam: float) -> Tensor:
    """Magnitude shrinkage z -> z/|z| * max(|z| - lam, 0), phase preserved.

    Works on real or complex tensors; the subgradient inside the dead
    zone is 0.
    """
    if lam < 0:
        raise ConfigError(f"soft_threshold lambda must be >= 0, got {lam}")
    r = np.abs(z.data)
    keep = r > lam
    safe_r = np.where(r == 0, 1.0, r)
    scale = np.where(keep, 1.0 - lam / safe_r, 0.0)
    data = z.data * scale

    def bwd(g):
        # Jacobian of z*(1 - lam/|z|): scale*I plus a rank-1 radial term.
        radial = np.where(keep, lam / (safe_r ** 3), 0.0)
        gz = scale * g + radial * z.data * np.real(np.conj(z.data) * g)
        if not z.is_complex:
            gz = gz.real
        _acc(z, gz)

    return _op(data, (z,), bwd)


# -- complex interchange -------------------------------------------------------------


def to_complex(x: Tensor) -> Tensor:
    if x.is_complex:
        return x
    data = x.data.astype(np.complex128)

    def bwd(g):
        _acc(x, np.real(g))

    return _op(data, (x,), bwd)


def view_as_complex(x: Tensor) -> Tensor:
    """Real tensor with trailing dim 2 -> complex tensor."""
    if x.is_complex or x.data.shape[-1] != 2:
        raise DimensionError("view_as_complex expects a real tensor with trailing dimension 2")
    data = x.data[..., 0] + 1j * x.data[..., 1]

    def bwd(g):
        _acc(x, np.stack((g.real, g.imag), axis=-1))

    return _op(data, (x,), bwd)


def real(z: Tensor) -> Tensor:
    if not z.is_complex:
        return z
    data = z.data.real.copy()

    def bwd(g):
        _acc(z, g.astype(np.complex128))

    return _op(data, (z,), bwd)


# -- spectral ops ----------------------------------------------------------------


def fft(x: Tensor, axis: int = -1) -> Tensor:
    """Unnormalized forward DFT of a complex tensor along ``axis``."""
    if not x.is_complex:
        raise TypeError("fft expects a complex tensor; promote with to_complex")
    n = x.data.shape[axis]
    data = fourier.fft(x.data, axis=axis)

    def bwd(g):
        # Adjoint of the DFT matrix is its conjugate transpose: N * ifft.
        _acc(x, n * fourier.ifft(g, axis=axis))

    return _op(data, (x,), bwd)


def ifft(x: Tensor, axis: int = -1) -> Tensor:
    if not x.is_complex:
        raise TypeError("ifft expects a complex tensor")
    n = x.data.shape[axis]
    data = fourier.ifft(x.data, axis=axis)

    def bwd(g):
        _acc(x, fourier.fft(g, axis=axis) / n)

    return _op(data, (x,), bwd)


# -- verification -----------------------------------------------------------------


def grad_check(builder: Callable[[], Tensor], params: Dict[str, Tensor], eps: float = 1e-5) -> float:
    """Compare tape gradients to central finite differences.

    ``builder`` must rebuild the (deterministic) scalar loss from the
    current contents of ``params``. Returns the max relative error with
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    zero_grads(params)
    loss = builder()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    worst = 0.0
    for name, p in params.items():
        flat = p.data.ravel()
        ana = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = builder().item()
            flat[i] = orig - eps
            down = builder().item()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            denom = max(abs(num), abs(ana[i]), 1e-8)
            worst = max(worst, abs(num - ana[i]) / denom)
    return worst

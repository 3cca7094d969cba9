"""Minimal dense float64 tensors with reverse-mode automatic differentiation.

The operation set covers exactly what the video model and its losses need:
elementwise arithmetic, matmul/linear, a stride-1 "same"-padded 3D
convolution, layer norm, sigmoid/tanh/exp/log/sqrt, softmax, concat/split,
reductions, a global max, temporal shift, and shape movement.

Design notes:

* Define-by-run: every op that sees a grad-requiring operand records its
  parents and a vector-Jacobian-product closure on the output tensor. The
  tape for a backward pass is rebuilt from those links each time.
* Broadcasting is restricted to suffix alignment: binary ops accept equal
  shapes, a 0-d scalar, or a smaller operand whose shape equals the trailing
  suffix of the other's (the gradient of the smaller operand then sums over
  the leading axes). Nothing else broadcasts.
* matmul and conv3d dispatch on operand size. Small instances use
  fixed-order sequential accumulation, which rounds identically to a
  straightforward scalar re-implementation looping in the same index order;
  large instances go through BLAS / im2col. layer_norm always reduces
  sequentially along the normalized axis (that axis is small here).
"""

from __future__ import annotations

import numpy as np

from .errors import (
    NonFiniteError,
    NoTapeError,
    ShapeMismatch,
    TapeConsumedError,
)

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "backward",
    "grad_check",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "linear",
    "conv3d",
    "layer_norm",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "softmax",
    "concat",
    "split",
    "mean",
    "sum",
    "amax",
    "avg_pool_spatial",
    "transpose",
    "reshape",
    "time_shift",
]

# Below this many multiply-adds (and, for matmul, at most this contraction
# length), matmul/conv3d accumulate sequentially in a fixed index order
# (reproducible against scalar re-implementations); above, they use BLAS,
# which reorders accumulation for speed.
_SEQ_KERNEL_FLOP_LIMIT = 1 << 18
_SEQ_KERNEL_K_LIMIT = 64


class Tensor:
    """A dense float64 array, optionally recording onto the gradient tape.

    Attributes:
        data: the np.float64 ndarray (row-major).
        requires_grad: whether a backward pass should produce a gradient.
        grad: same-shape float64 ndarray; present only after backward().
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op", "_spent")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._op = "leaf"
        self._spent = False

    # -- introspection -------------------------------------------------
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
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self):
        return self.item()

    def __repr__(self):
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad}{grad})"

    def detach(self):
        """A constant tensor sharing this tensor's values (no tape link)."""
        return Tensor(self.data)

    # -- operator sugar -------------------------------------------------
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


def as_tensor(x):
    """Pass Tensors through; wrap anything array-like as a constant Tensor."""
    return x if isinstance(x, Tensor) else Tensor(x)


_coerce = as_tensor


def _node(data, op, parents, vjp):
    """Wrap `data`; record graph edges when any parent requires grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


class Tape:
    """Topologically ordered record of the ops reachable from one output.

    `nodes` lists tensors with parents preceding children; backward walks it
    in reverse, visiting each node exactly once.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @staticmethod
    def trace(root):
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return Tape(order)


def backward(loss):
    """Populate .grad with d(loss)/d(tensor) for every tensor on loss's tape.

    Gradients accumulate into any pre-existing .grad buffers (used for
    summing over a mini-batch); call zero_grad() between optimizer steps.
    Raises NoTapeError for a detached loss and TapeConsumedError on a second
    call without a fresh forward pass.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._spent:
        raise TapeConsumedError(
            "backward was already called on this output; rerun the forward pass"
        )
    if not loss.requires_grad:
        raise NoTapeError("loss is not on a tape: no operand in its history requires grad")

    tape = Tape.trace(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    loss._spent = True
    # Release closures so intermediate buffers can be collected.
    for node in tape.nodes:
        node._vjp = None
        node._parents = ()


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# broadcasting helpers (suffix alignment only)
# ---------------------------------------------------------------------------


def _check_broadcast(op, sa, sb):
    """Validate the restricted broadcast; shapes must be equal, or one must be
    scalar or a trailing suffix of the other."""
    if sa == sb:
        return
    if sa == () or sb == ():
        return
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) == len(big) or big[len(big) - len(small):] != small:
        raise ShapeMismatch(op, sa, sb, "broadcast allows equal, scalar, or suffix shapes")


def _reduce_to(g, shape):
    """Sum gradient `g` over the leading axes it was broadcast across."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    k = g.ndim - len(shape)
    return g.sum(axis=tuple(range(k)))


def _binary(op, a, b, fwd, dfa, dfb):
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(op, a.shape, b.shape)
    ad, bd = a.data, b.data
    out = fwd(ad, bd)

    def vjp(g):
        ga = _reduce_to(dfa(g, ad, bd), a.shape) if a.requires_grad else None
        gb = _reduce_to(dfb(g, ad, bd), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, op, (a, b), vjp)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    return _binary(
        "add", a, b,
        lambda x, y: x + y,
        lambda g, x, y: g,
        lambda g, x, y: g,
    )


def sub(a, b):
    return _binary(
        "sub", a, b,
        lambda x, y: x - y,
        lambda g, x, y: g,
        lambda g, x, y: -g,
    )


def mul(a, b):
    return _binary(
        "mul", a, b,
        lambda x, y: x * y,
        lambda g, x, y: g * y,
        lambda g, x, y: g * x,
    )


def div(a, b):
    return _binary(
        "div", a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def neg(a):
    a = _coerce(a)
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# matmul / linear
# ---------------------------------------------------------------------------


def _matmul_seq(a2, bd):
    """(P, K) @ (K, N) accumulated sequentially over K (fixed rounding order)."""
    p, k = a2.shape
    out = np.zeros((p, bd.shape[1]))
    for i in range(k):
        out += a2[:, i : i + 1] * bd[i]
    return out


def matmul(a, b):
    """a (..., K) @ b (K, N) -> (..., N). b must be 2-d."""
    a, b = _coerce(a), _coerce(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape, "expects (..., K) @ (K, N)")
    ad, bd = a.data, b.data
    k, n = bd.shape
    lead = ad.shape[:-1]
    p = ad.size // k if k else 0
    a2 = ad.reshape(p, k)
    if p * k * n <= _SEQ_KERNEL_FLOP_LIMIT and k <= _SEQ_KERNEL_K_LIMIT:
        out2 = _matmul_seq(a2, bd)
    else:
        out2 = a2 @ bd
    out = out2.reshape(lead + (n,))

    def vjp(g):
        g2 = g.reshape(p, n)
        ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return _node(out, "matmul", (a, b), vjp)


def linear(x, w, b=None):
    """x (..., C) @ w (C, D) + b (D,)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# conv3d
# ---------------------------------------------------------------------------


def _offsets(kt, kh, kw):
    return [(dt, dh, dw) for dt in range(kt) for dh in range(kh) for dw in range(kw)]


def _conv3d_cols(xl, pads, kdims):
    """im2col of a channels-last block xl (T, H, W, C): pad, then gather all
    kernel-offset neighborhoods.

    Returns (T*H*W, kt*kh*kw * C) with offsets enumerated (dt, dh, dw)
    lexicographically, channel fastest.
    """
    t, h, w, _ = xl.shape
    xpl = np.pad(xl, (pads[0], pads[1], pads[2], (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(xpl, kdims, axis=(0, 1, 2))
    # view: (T, H, W, C, kt, kh, kw) -> offset-major, channel-minor columns
    return view.transpose(0, 1, 2, 4, 5, 6, 3).reshape(t * h * w, -1)


def conv3d(x, kernel, stride=1, pad="same"):
    """3D convolution over the (T, H, W) axes of x (T, C_in, H, W).

    kernel: (C_out, C_in, kT, kH, kW) with odd extents; output has the input's
    spatial/temporal shape (stride 1, zero "same" padding — the only supported
    mode).
    """
    x, kernel = _coerce(x), _coerce(kernel)
    if stride != 1:
        raise ValueError(f"conv3d supports stride=1 only, got {stride}")
    if pad != "same":
        raise ValueError(f'conv3d supports pad="same" only, got {pad!r}')
    if x.ndim != 4 or kernel.ndim != 5 or kernel.shape[1] != x.shape[1]:
        raise ShapeMismatch("conv3d", x.shape, kernel.shape,
                            "expects x (T, C_in, H, W), kernel (C_out, C_in, kT, kH, kW)")
    co, ci, kt, kh, kw = kernel.shape
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv3d needs odd kernel extents, got {(kt, kh, kw)}")
    t, _, h, w = x.shape
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    kd = kernel.data
    s = t * h * w
    k3 = kt * kh * kw

    pads = ((pt, pt), (ph, ph), (pw, pw))
    kdims = (kt, kh, kw)

    if s * ci * k3 * co <= _SEQ_KERNEL_FLOP_LIMIT:
        # Sequential accumulation in (c, dt, dh, dw) order.
        xp = np.pad(x.data, ((pt, pt), (0, 0), (ph, ph), (pw, pw)))
        out = np.zeros((t, co, h, w))
        for c in range(ci):
            for dt, dh, dw in _offsets(kt, kh, kw):
                sl = xp[dt : dt + t, c, dh : dh + h, dw : dw + w]
                out += sl[:, None] * kd[:, c, dt, dh, dw].reshape(1, co, 1, 1)
        cols = None
    else:
        cols = _conv3d_cols(x.data.transpose(0, 2, 3, 1), pads, kdims)
        # kernel as (C_out, k3*C_in) matching the cols' offset-major layout
        kmat = kd.transpose(0, 2, 3, 4, 1).reshape(co, k3 * ci)
        out = (cols @ kmat.T).reshape(t, h, w, co).transpose(0, 3, 1, 2)

    def vjp(g):
        gl = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        g2 = gl.reshape(s, co)
        gx = None
        if x.requires_grad:
            # Input gradient = same-padded correlation of g with the
            # flipped kernel (stride-1 transpose convolution).
            gcols = _conv3d_cols(gl, pads, kdims)
            kflip = np.ascontiguousarray(
                kd[:, :, ::-1, ::-1, ::-1].transpose(2, 3, 4, 0, 1)
            ).reshape(k3 * co, ci)
            gx = (gcols @ kflip).reshape(t, h, w, ci).transpose(0, 3, 1, 2)
        gk = None
        if kernel.requires_grad:
            c2 = cols
            if c2 is None:
                c2 = _conv3d_cols(x.data.transpose(0, 2, 3, 1), pads, kdims)
            gk = (g2.T @ c2).reshape(co, kt, kh, kw, ci).transpose(0, 4, 1, 2, 3)
        return gx, gk

    return _node(out, "conv3d", (x, kernel), vjp)


# ---------------------------------------------------------------------------
# normalizations and pointwise nonlinearities
# ---------------------------------------------------------------------------


def layer_norm(x, eps=1e-5, axis=-1):
    """Standardize x along `axis`: (x - mean) / sqrt(var + eps).

    Reductions along `axis` run sequentially in index order so the result is
    reproducible against a plain scalar re-implementation.
    """
    x = _coerce(x)
    if eps <= 0:
        raise ValueError(f"layer_norm needs eps > 0, got {eps}")
    ax = axis % x.ndim
    xm = np.moveaxis(x.data, ax, -1)
    n = xm.shape[-1]
    acc = np.zeros(xm.shape[:-1])
    for i in range(n):
        acc = acc + xm[..., i]
    mu = acc / n
    d = xm - mu[..., None]
    vacc = np.zeros(xm.shape[:-1])
    for i in range(n):
        vacc = vacc + d[..., i] * d[..., i]
    s = np.sqrt(vacc / n + eps)
    y = d / s[..., None]
    out = np.moveaxis(y, -1, ax)

    def vjp(g):
        gm = np.moveaxis(g, ax, -1)
        gmean = gm.mean(axis=-1, keepdims=True)
        ymean = (gm * y).mean(axis=-1, keepdims=True)
        gx = (gm - gmean - y * ymean) / s[..., None]
        return (np.moveaxis(gx, -1, ax),)

    return _node(out, "layer_norm", (x,), vjp)


def sigmoid(x):
    x = _coerce(x)
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x.data))
    return _node(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = _coerce(x)
    y = np.tanh(x.data)
    return _node(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def exp(x):
    x = _coerce(x)
    y = np.exp(x.data)
    return _node(y, "exp", (x,), lambda g: (g * y,))


def log(x):
    x = _coerce(x)
    return _node(np.log(x.data), "log", (x,), lambda g: (g / x.data,))


def sqrt(x):
    x = _coerce(x)
    y = np.sqrt(x.data)
    return _node(y, "sqrt", (x,), lambda g: (g * 0.5 / y,))


def softmax(x, axis=-1):
    """Numerically stable softmax along `axis`; slices sum to 1."""
    x = _coerce(x)
    xd = x.data
    shift = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shift)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _node(y, "softmax", (x,), vjp)


# ---------------------------------------------------------------------------
# structure: concat / split / movement
# ---------------------------------------------------------------------------


def concat(xs, axis=0):
    xs = [_coerce(x) for x in xs]
    if not xs:
        raise ValueError("concat needs at least one tensor")
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        s = x.shape
        if len(s) != len(ref) or s[:ax] != ref[:ax] or s[ax + 1 :] != ref[ax + 1 :]:
            raise ShapeMismatch("concat", ref, s, f"non-concat axes must match (axis={axis})")
    out = np.concatenate([x.data for x in xs], axis=ax)
    sizes = [x.shape[ax] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        slc = [slice(None)] * g.ndim
        grads = []
        for i in range(len(xs)):
            slc[ax] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(slc)])
        return tuple(grads)

    return _node(out, "concat", tuple(xs), vjp)


def split(x, sizes, axis=0):
    """Slice x into len(sizes) tensors along `axis`; inverse of concat."""
    x = _coerce(x)
    ax = axis % x.ndim
    if int(np.sum(sizes)) != x.shape[ax]:
        raise ValueError(f"split sizes {tuple(sizes)} do not sum to extent {x.shape[ax]}")
    bounds = np.cumsum([0] + list(sizes))
    outs = []
    for i in range(len(sizes)):
        slc = [slice(None)] * x.ndim
        slc[ax] = slice(bounds[i], bounds[i + 1])
        slc = tuple(slc)

        def vjp(g, slc=slc):
            gx = np.zeros_like(x.data)
            gx[slc] = g
            return (gx,)

        outs.append(_node(x.data[slc], "split", (x,), vjp))
    return outs


def transpose(x, axes):
    x = _coerce(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), "transpose", (x,), lambda g: (g.transpose(inv),))


def reshape(x, shape):
    x = _coerce(x)
    shape = tuple(shape)
    old = x.shape
    return _node(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def time_shift(x, delta, axis=0):
    """Shift x by `delta` along `axis`, zero-filling: out[t] = x[t - delta]."""
    x = _coerce(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    d = int(delta)

    def shifted(arr, d):
        out = np.zeros_like(arr)
        if abs(d) >= n:
            return out
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        if d > 0:
            dst[ax], src[ax] = slice(d, None), slice(None, n - d)
        elif d < 0:
            dst[ax], src[ax] = slice(None, n + d), slice(-d, None)
        else:
            return arr.copy()
        out[tuple(dst)] = arr[tuple(src)]
        return out

    return _node(shifted(x.data, d), "time_shift", (x,), lambda g: (shifted(g, -d),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def _expand_back(g, shape, axes):
    full = list(g.shape)
    for a in axes:
        full.insert(a, 1)
    return np.broadcast_to(g.reshape(full), shape)


def sum(x, axes=None):  # noqa: A001 - deliberate numpy-style name
    """Sum over `axes` (all axes when None); reduced axes are dropped."""
    x = _coerce(x)
    axes = _norm_axes(axes, x.ndim)
    out = x.data.sum(axis=axes)
    shape = x.shape
    return _node(out, "sum", (x,), lambda g: (_expand_back(g, shape, axes).copy(),))


def mean(x, axes=None):
    """Mean over `axes` (all axes when None); reduced axes are dropped."""
    x = _coerce(x)
    axes = _norm_axes(axes, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.mean(axis=axes)
    shape = x.shape
    return _node(out, "mean", (x,), lambda g: (_expand_back(g, shape, axes) / count,))


def amax(x):
    """Global maximum as a 0-d tensor; gradient flows to the first argmax."""
    x = _coerce(x)
    idx = int(np.argmax(x.data))
    out = np.asarray(x.data.reshape(-1)[idx])

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx.reshape(-1)[idx] = g
        return (gx,)

    return _node(out, "amax", (x,), vjp)


def avg_pool_spatial(x):
    """(T, C, H, W) -> (T, C): average over the two spatial axes."""
    x = _coerce(x)
    if x.ndim != 4:
        raise ShapeMismatch("avg_pool_spatial", x.shape, (0, 0, 0, 0), "expects 4 axes")
    return mean(x, axes=(2, 3))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(f, x, h=1e-5):
    """Max relative error between f's analytic gradient at x and central
    finite differences.

    f must be a pure scalar-valued function of one Tensor. The error per
    coordinate is |analytic - numeric| / max(1, |analytic|); the max over
    coordinates is returned. Raises NonFiniteError (naming the coordinate)
    if any evaluation is non-finite.
    """
    base = np.array(x.data, dtype=np.float64)
    xv = Tensor(base.copy(), requires_grad=True)
    y = f(xv)
    if y.data.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued f, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise NonFiniteError("f(x) is not finite", coordinate=None)
    backward(y)
    analytic = xv.grad.reshape(-1)
    if not np.isfinite(analytic).all():
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NonFiniteError(
            f"analytic gradient is not finite at flat coordinate {bad} "
            f"(index {np.unravel_index(bad, base.shape)})",
            coordinate=bad,
        )

    work = base.copy()
    flat = work.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(work)).data)
        flat[i] = orig - h
        fm = float(f(Tensor(work)).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(
                f"f is not finite at perturbation of flat coordinate {i} "
                f"(index {np.unravel_index(i, base.shape)})",
                coordinate=i,
            )
        numeric = (fp - fm) / (2.0 * h)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        if err > worst:
            worst = err
    return worst

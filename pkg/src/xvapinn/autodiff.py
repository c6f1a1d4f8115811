"""Derivative engine: reverse-mode tape over NumPy arrays and second-order
input jets of feed-forward networks.

Two cooperating pieces:

* ``Tensor`` — a minimal reverse-mode autodiff node wrapping an ndarray.
  Gradients of scalar objectives with respect to network parameters are
  obtained by running the exact same NumPy computation with parameter leaves
  wrapped in Tensors and calling :meth:`Tensor.backward`.

* ``network_jets`` — forward propagation of value, time-derivative, spatial
  first derivatives and spatial second derivatives of a tanh multilayer
  perceptron through its layers.  Input derivatives are computed by exact
  chain-rule recursions (cheap because the input dimension is at most 3);
  parameter gradients come from taping that recursion, so no third-order
  general-purpose AD is ever required.

All functions accept either plain ndarrays or Tensors and perform the same
floating-point operations in the same order, which makes a gradient-tracked
loss evaluation bit-identical to an untracked one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError

__all__ = [
    "Tensor",
    "Jet2",
    "JetBatch",
    "network_jets",
    "input_jet",
    "loss_gradient",
    "vtanh",
    "vmax0",
    "vmin0",
    "vdot",
    "vconcat",
    "as_array",
]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of NumPy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node of the reverse-mode tape.

    ``data`` is always a float64 ndarray (0-d for scalars).  Non-leaf nodes
    keep references to their parents and a closure that accumulates gradients
    into them.  Creation order doubles as a topological order, so backward is
    a deterministic reverse sweep.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    _counter = itertools.count()
    # NumPy must defer binary ops to Tensor.__r*__ instead of broadcasting
    # over the object.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self._seq = next(Tensor._counter)

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph ------------------------------------------------------------

    def backward(self):
        if self.data.ndim != 0:
            raise ContractError("backward() requires a scalar Tensor")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda n: n._seq)
        for node in nodes:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, grad):
        # gradients are never mutated in place, so sharing the incoming array
        # on first touch is safe
        self.grad = grad if self.grad is None else self.grad + grad

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        od = other.data if isinstance(other, Tensor) else np.asarray(other, dtype=np.float64)
        out_data = self.data + od

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            if isinstance(other, Tensor) and other.requires_grad:
                other._accumulate(_unbroadcast(g, od.shape))

        parents = (self, other) if isinstance(other, Tensor) else (self,)
        return Tensor(out_data, parents=parents, backward=backward)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor(-self.data, parents=(self,), backward=backward)

    def __sub__(self, other):
        return self.__add__(-other if isinstance(other, Tensor) else np.negative(other))

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        od = other.data if isinstance(other, Tensor) else np.asarray(other, dtype=np.float64)
        out_data = self.data * od

        def backward(g):
            self._accumulate(_unbroadcast(g * od, self.data.shape))
            if isinstance(other, Tensor) and other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, od.shape))

        parents = (self, other) if isinstance(other, Tensor) else (self,)
        return Tensor(out_data, parents=parents, backward=backward)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("Tensor/Tensor division is not supported; multiply by a reciprocal")
        return self.__mul__(1.0 / np.asarray(other, dtype=np.float64))

    def __pow__(self, exponent):
        p = float(exponent)
        out_data = self.data ** p

        def backward(g):
            self._accumulate(g * p * self.data ** (p - 1.0))

        return Tensor(out_data, parents=(self,), backward=backward)

    def __matmul__(self, other):
        od = other.data if isinstance(other, Tensor) else np.asarray(other, dtype=np.float64)
        out_data = self.data @ od
        if od.ndim != 2:
            raise ContractError("matmul right operand must be 2-D")

        def backward(g):
            self._accumulate(g @ od.swapaxes(-1, -2))
            if isinstance(other, Tensor) and other.requires_grad:
                gl = self.data.reshape(-1, self.data.shape[-1])
                gr = g.reshape(-1, g.shape[-1])
                other._accumulate(gl.T @ gr)

        parents = (self, other) if isinstance(other, Tensor) else (self,)
        return Tensor(out_data, parents=parents, backward=backward)

    def __rmatmul__(self, other):
        od = np.asarray(other, dtype=np.float64)
        out_data = od @ self.data

        def backward(g):
            gl = od.reshape(-1, od.shape[-1])
            gr = g.reshape(-1, g.shape[-1])
            self._accumulate(gl.T @ gr)

        return Tensor(out_data, parents=(self,), backward=backward)

    # -- shaping -----------------------------------------------------------

    @property
    def T(self):
        def backward(g):
            self._accumulate(g.T)

        return Tensor(self.data.T, parents=(self,), backward=backward)

    def __getitem__(self, key):
        out_data = self.data[key]
        fancy = isinstance(key, np.ndarray) or (
            isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
        )

        def backward(g):
            full = np.zeros_like(self.data)
            if fancy:
                np.add.at(full, key, g)
            else:
                full[key] = g
            self._accumulate(full)

        return Tensor(out_data, parents=(self,), backward=backward)

    def reshape(self, *shape):
        old = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(old))

        return Tensor(self.data.reshape(*shape), parents=(self,), backward=backward)

    # -- nonlinear / reductions ---------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - y * y))

        return Tensor(y, parents=(self,), backward=backward)

    def maximum0(self):
        """max(x, 0) with subgradient 0 at the kink."""
        mask = self.data > 0.0

        def backward(g):
            self._accumulate(g * mask)

        return Tensor(np.maximum(self.data, 0.0), parents=(self,), backward=backward)

    def minimum0(self):
        """min(x, 0) with subgradient 0 at the kink."""
        mask = self.data < 0.0

        def backward(g):
            self._accumulate(g * mask)

        return Tensor(np.minimum(self.data, 0.0), parents=(self,), backward=backward)

    def sum(self):
        def backward(g):
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        return Tensor(self.data.sum(), parents=(self,), backward=backward)


# -- polymorphic helpers (Tensor or ndarray) --------------------------------


def as_array(x):
    """Underlying ndarray of a Tensor, or the input unchanged."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def vtanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


def vmax0(x):
    return x.maximum0() if isinstance(x, Tensor) else np.maximum(x, 0.0)


def vmin0(x):
    return x.minimum0() if isinstance(x, Tensor) else np.minimum(x, 0.0)


def vdot(weights, x):
    """Weighted sum ``sum(weights * x)`` for constant weights."""
    if isinstance(x, Tensor):
        w = np.asarray(weights, dtype=np.float64)

        def backward(g):
            x._accumulate(g * w)

        return Tensor(np.dot(w, x.data), parents=(x,), backward=backward)
    return np.dot(np.asarray(weights, dtype=np.float64), x)


def vconcat(parts):
    if any(isinstance(p, Tensor) for p in parts):
        tensors = [p if isinstance(p, Tensor) else Tensor(p) for p in parts]
        sizes = [t.data.shape[0] for t in tensors]
        out_data = np.concatenate([t.data for t in tensors], axis=0)
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t._accumulate(g[lo:hi])

        return Tensor(out_data, parents=tuple(tensors), backward=backward)
    return np.concatenate(parts, axis=0)


# -- jets --------------------------------------------------------------------


@dataclass
class Jet2:
    """Value and input derivatives of a scalar field at one space-time point.

    ``d_xx`` is a symmetric ``d x d`` matrix of spatial second derivatives;
    mixed partials are stored once and mirrored, so symmetry is exact.
    """

    value: float
    d_t: float
    d_x: np.ndarray
    d_xx: np.ndarray


class JetBatch:
    """Per-channel arrays for a batch of points.

    ``val`` and ``dt`` have shape ``(n,)``; ``dx`` is a tuple of ``d`` arrays;
    second derivatives are stored once per unordered pair in row-major upper
    triangular order and retrieved through :meth:`dxx`.
    """

    __slots__ = ("val", "dt", "dx", "_dxx", "dim")

    def __init__(self, val, dt, dx, dxx_pairs, dim):
        self.val = val
        self.dt = dt
        self.dx = tuple(dx)
        self._dxx = tuple(dxx_pairs)
        self.dim = dim

    def dxx(self, i, j):
        if i > j:
            i, j = j, i
        # index of (i, j), j >= i, in upper-triangular row-major order
        d = self.dim
        return self._dxx[i * d - i * (i - 1) // 2 + (j - i)]


def _spatial_pairs(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


def network_jets(weights, biases, scaling, points):
    """Propagate second-order jets of a tanh MLP through its layers.

    ``weights``/``biases`` are per-layer arrays or Tensors with the output
    layer last (identity activation).  ``scaling`` is ``(shift, scale)``
    per-axis arrays or ``None``.  ``points`` is ``(n, d_hat)`` with time in
    column 0.  Returns a :class:`JetBatch` over the ``d = d_hat - 1`` spatial
    axes.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ContractError("points must be a 2-D array (n, d_hat)")
    d_hat = pts.shape[1]
    d = d_hat - 1
    w0 = as_array(weights[0])
    if w0.shape[1] != d_hat:
        raise ContractError(
            f"point dimension {d_hat} does not match network input dimension {w0.shape[1]}"
        )
    if not np.isfinite(pts).all():
        raise NumericError("non-finite collocation point")

    if scaling is not None:
        shift, scale = scaling
        scaled = (pts - shift) / scale
        inv_scale = 1.0 / np.asarray(scale, dtype=np.float64)
    else:
        scaled = pts
        inv_scale = np.ones(d_hat)

    pairs = _spatial_pairs(d)
    # Seed channels: value rows are the scaled inputs; the derivative of the
    # k-th scaled coordinate w.r.t. the k-th raw input is 1/scale_k, constant
    # across the batch, so first-order seeds are single rows that broadcast.
    a_val = scaled
    a_first = [inv_scale[k] * np.eye(d_hat)[k][None, :] for k in range(d_hat)]
    a_second = None  # identically zero before the first activation

    n_layers = len(weights)
    for layer in range(n_layers - 1):
        wt = weights[layer].T if isinstance(weights[layer], Tensor) else as_array(weights[layer]).T
        z_val = a_val @ wt + biases[layer]
        z_first = [a @ wt for a in a_first]
        z_second = [a @ wt for a in a_second] if a_second is not None else None

        v = vtanh(z_val)
        s1 = 1.0 - v * v          # tanh'
        s2 = -2.0 * v * s1        # tanh''
        a_val = v
        a_first = [s1 * z for z in z_first]
        if z_second is None:
            a_second = [s2 * (z_first[1 + i] * z_first[1 + j]) for i, j in pairs]
        else:
            a_second = [
                s2 * (z_first[1 + i] * z_first[1 + j]) + s1 * z_second[k]
                for k, (i, j) in enumerate(pairs)
            ]

    wt = weights[-1].T if isinstance(weights[-1], Tensor) else as_array(weights[-1]).T
    out_val = (a_val @ wt + biases[-1])[:, 0]
    out_first = [(a @ wt)[:, 0] for a in a_first]
    if a_second is None:
        zeros = np.zeros(pts.shape[0])
        out_second = [zeros for _ in pairs]
    else:
        out_second = [(a @ wt)[:, 0] for a in a_second]

    n = pts.shape[0]

    def ensure_batch(ch):
        # first-layer-only derivative channels of constant rows stay (1,);
        # expand them so downstream region slicing sees (n,) arrays
        if as_array(ch).shape[0] == n:
            return ch
        return ch * np.ones(n) if isinstance(ch, Tensor) else np.broadcast_to(ch, (n,)).copy()

    return JetBatch(
        val=out_val,
        dt=ensure_batch(out_first[0]),
        dx=[ensure_batch(c) for c in out_first[1:]],
        dxx_pairs=[ensure_batch(c) for c in out_second],
        dim=d,
    )


def input_jet(params, point):
    """Exact value and input derivatives of the network at one point."""
    point = np.asarray(point, dtype=np.float64)
    if point.ndim != 1:
        raise ContractError("point must be a 1-D coordinate array (t, x...)")
    jets = network_jets(
        params.weights, params.biases, params.input_scaling_arrays(), point[None, :]
    )
    d = point.shape[0] - 1
    d_xx = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            d_xx[i, j] = as_array(jets.dxx(i, j))[0]
    value = float(as_array(jets.val)[0])
    if not np.isfinite(value):
        raise NumericError("non-finite network output")
    return Jet2(
        value=value,
        d_t=float(as_array(jets.dt)[0]),
        d_x=np.array([float(as_array(c)[0]) for c in jets.dx]),
        d_xx=d_xx,
    )


def jet_channels(weights, biases, scaling, points):
    """Fused jet propagation: same math as :func:`network_jets`, restructured
    as one tape node per call with a hand-derived backward pass.

    This is the training hot path; it avoids the per-operation temporaries
    of the layer-by-layer tape.  Tests pin its values and parameter gradients
    against :func:`network_jets`, which stays the readable reference.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ContractError("points must be a 2-D array (n, d_hat)")
    n, d_hat = pts.shape
    d = d_hat - 1
    if as_array(weights[0]).shape[1] != d_hat:
        raise ContractError(
            f"point dimension {d_hat} does not match network input dimension "
            f"{as_array(weights[0]).shape[1]}"
        )
    pairs = _spatial_pairs(d)
    n_first = d_hat           # time + spatial first-derivative channels
    n_pairs = len(pairs)

    if scaling is not None:
        shift, scale = scaling
        scaled = (pts - shift) / scale
        inv_scale = 1.0 / np.asarray(scale, dtype=np.float64)
    else:
        scaled = pts
        inv_scale = np.ones(d_hat)

    w_arrays = [as_array(w) for w in weights]
    b_arrays = [as_array(b) for b in biases]
    taped = isinstance(weights[0], Tensor)

    # seed channels: scaled inputs plus constant one-hot derivative rows
    a_val = scaled
    a_first = [
        np.broadcast_to(inv_scale[k] * np.eye(d_hat)[k], (n, d_hat)).copy()
        for k in range(d_hat)
    ]
    layers = []  # per hidden layer context for the backward pass
    a_second = None
    for w, b in zip(w_arrays[:-1], b_arrays[:-1]):
        wt = w.T
        z_val = a_val @ wt + b
        z_first = [a @ wt for a in a_first]
        z_second = [a @ wt for a in a_second] if a_second is not None else None
        v = np.tanh(z_val)
        s1 = 1.0 - v * v
        s2 = -2.0 * v * s1
        prods = [z_first[1 + i] * z_first[1 + j] for i, j in pairs]
        out_first = [s1 * z for z in z_first]
        if z_second is None:
            out_second = [s2 * p for p in prods]
        else:
            out_second = [s2 * p + s1 * z for p, z in zip(prods, z_second)]
        layers.append(
            {
                "a_val": a_val, "a_first": a_first, "a_second": a_second,
                "z_first": z_first, "z_second": z_second,
                "v": v, "s1": s1, "s2": s2, "prods": prods,
            }
        )
        a_val, a_first, a_second = v, out_first, out_second

    w_out, b_out = w_arrays[-1], b_arrays[-1]
    wt = w_out.T
    final = [(a_val @ wt + b_out)[:, 0]]
    final += [(a @ wt)[:, 0] for a in a_first]
    if a_second is None:
        final += [np.zeros(n) for _ in pairs]
    else:
        final += [(a @ wt)[:, 0] for a in a_second]
    stacked_data = np.stack(final, axis=0)

    if not taped:
        return _jet_batch_from(stacked_data, d)

    out_ctx = {"a_val": a_val, "a_first": a_first, "a_second": a_second}

    def backward(g):
        # g has shape (2 + d_hat-1 + n_pairs... , n) == (channels, n)
        gw_out = np.zeros_like(w_out)
        gb_out = np.zeros_like(b_out)
        g_val = g[0]
        gw_out[0] = g_val @ out_ctx["a_val"]
        gb_out[0] = g_val.sum()
        w_row = w_out[0]
        ga_val = g_val[:, None] * w_row
        ga_first = []
        for k in range(n_first):
            gk = g[1 + k]
            gw_out[0] += gk @ out_ctx["a_first"][k]
            ga_first.append(gk[:, None] * w_row)
        ga_second = None
        if out_ctx["a_second"] is not None:
            ga_second = []
            for p in range(n_pairs):
                gp = g[1 + n_first + p]
                gw_out[0] += gp @ out_ctx["a_second"][p]
                ga_second.append(gp[:, None] * w_row)
        weights[-1]._accumulate(gw_out)
        biases[-1]._accumulate(gb_out)

        for ctx, w_t, b_t in zip(reversed(layers), reversed(weights[:-1]),
                                 reversed(biases[:-1])):
            v, s1, s2 = ctx["v"], ctx["s1"], ctx["s2"]
            z_first, z_second, prods = ctx["z_first"], ctx["z_second"], ctx["prods"]
            ds2 = -2.0 * (s1 * s1 + v * s2)
            gu = ga_val * s1
            g_zf = [ga_first[k] * s1 for k in range(n_first)]
            g_zs = None if z_second is None else []
            for k in range(n_first):
                gu += ga_first[k] * z_first[k] * s2
            if ga_second is not None:
                for p, (i, j) in enumerate(pairs):
                    gp = ga_second[p]
                    if z_second is None:
                        gu += gp * (prods[p] * ds2)
                    else:
                        gu += gp * (prods[p] * ds2 + z_second[p] * s2)
                        g_zs.append(gp * s1)
                    g_zf[1 + i] += gp * s2 * z_first[1 + j]
                    g_zf[1 + j] += gp * s2 * z_first[1 + i]
            w = as_array(w_t)
            gw = gu.T @ ctx["a_val"]
            gb = gu.sum(axis=0)
            new_val = gu @ w
            new_first = []
            for k in range(n_first):
                gw += g_zf[k].T @ ctx["a_first"][k]
                new_first.append(g_zf[k] @ w)
            new_second = None
            if g_zs is not None:
                new_second = []
                for p in range(n_pairs):
                    gw += g_zs[p].T @ ctx["a_second"][p]
                    new_second.append(g_zs[p] @ w)
            w_t._accumulate(gw)
            b_t._accumulate(gb)
            ga_val, ga_first, ga_second = new_val, new_first, new_second

    node = Tensor(stacked_data, parents=tuple(weights) + tuple(biases), backward=backward)
    return _jet_batch_from(node, d)


def _jet_batch_from(stacked, d):
    n_first = d + 1
    val = stacked[0]
    dt = stacked[1]
    dx = [stacked[2 + k] for k in range(d)]
    dxx = [stacked[1 + n_first + p] for p in range(len(_spatial_pairs(d)))]
    return JetBatch(val=val, dt=dt, dx=dx, dxx_pairs=dxx, dim=d)


class TapedParams:
    """Network parameters wrapped as tape leaves for one gradient evaluation."""

    def __init__(self, params):
        self.params = params
        self.weights = [Tensor(w, requires_grad=True) for w in params.weights]
        self.biases = [Tensor(b, requires_grad=True) for b in params.biases]

    def input_scaling_arrays(self):
        return self.params.input_scaling_arrays()

    def jets(self, points):
        return network_jets(self.weights, self.biases, self.input_scaling_arrays(), points)

    def gradient(self):
        """Flat gradient aligned with ``NetworkParams.flatten`` order."""
        chunks = []
        for w, b in zip(self.weights, self.biases):
            gw = w.grad if w.grad is not None else np.zeros_like(w.data)
            gb = b.grad if b.grad is not None else np.zeros_like(b.data)
            chunks.append(np.asarray(gw).ravel())
            chunks.append(np.asarray(gb).ravel())
        return np.concatenate(chunks)


def loss_gradient(objective, params):
    """Evaluate a scalar objective of the parameters and its flat gradient.

    ``objective`` receives a :class:`TapedParams` and must build its value
    from jet evaluations, arithmetic, max/min and powers, returning a scalar
    Tensor.  The returned loss equals a gradient-free evaluation of the same
    objective bit for bit, because the taped run performs identical NumPy
    operations.
    """
    taped = TapedParams(params)
    out = objective(taped)
    if not isinstance(out, Tensor):
        raise ContractError("objective must return a scalar Tensor")
    value = float(out.data)
    if not np.isfinite(value):
        raise NumericError("objective evaluated to a non-finite value")
    out.backward()
    return value, taped.gradient()

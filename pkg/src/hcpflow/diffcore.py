"""Minimal reverse-mode differentiation engine on dense numpy arrays.

The engine is a plain tape: every operation returns a :class:`Tensor` that
remembers its parents and a closure computing the vector-Jacobian product.
It supports exactly what a small fully connected network with a constant
linear projection layer needs; nothing more.
"""

from __future__ import annotations

import numpy as np


class GraphConsumedError(RuntimeError):
    """Raised when backward() is called twice on the same graph."""


def _as_array(value):
    a = np.asarray(value, dtype=np.float64)
    return a


class Tensor:
    """One node of the computation graph.

    ``value`` is a numpy array (possibly 0-d), ``parents`` the operand
    nodes, and ``_vjp`` a closure mapping the incoming adjoint to a tuple
    of parent adjoints. Leaf tensors created with ``requires_grad=True``
    accumulate into ``grad``.
    """

    __slots__ = ("value", "parents", "_vjp", "grad", "requires_grad", "_consumed")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = _as_array(value)
        if not np.all(np.isfinite(self.value)):
            raise FloatingPointError("non-finite value entered the graph")
        self.parents = tuple(parents)
        self._vjp = vjp
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)


def constant(value):
    return Tensor(value)


def leaf(value):
    return Tensor(value, requires_grad=True)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, iter(root.parents))]
    seen.add(id(root))
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            if id(p) not in seen and p.requires_grad:
                seen.add(id(p))
                stack.append((p, iter(p.parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    ``loss`` must be scalar. A graph may be walked once; repeated calls
    raise :class:`GraphConsumedError`.
    """
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ValueError("backward() needs a scalar loss, got shape %s" % (loss.shape,))
    if loss._consumed:
        raise GraphConsumedError("graph already consumed by a previous backward()")
    loss._consumed = True

    order = _toposort(loss)
    adjoint = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # leaf: accumulate
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.array(g, dtype=np.float64)
                else:
                    node.grad = node.grad + g
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in adjoint:
                adjoint[id(p)] = adjoint[id(p)] + pg
            else:
                adjoint[id(p)] = pg


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a, b):
    if a.value.shape != b.value.shape:
        raise ValueError("add: shape mismatch %s vs %s" % (a.shape, b.shape))
    return Tensor(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    if a.value.shape != b.value.shape:
        raise ValueError("sub: shape mismatch %s vs %s" % (a.shape, b.shape))
    return Tensor(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    if a.value.shape != b.value.shape:
        raise ValueError("mul: shape mismatch %s vs %s" % (a.shape, b.shape))
    av, bv = a.value, b.value
    return Tensor(av * bv, (a, b), lambda g: (g * bv, g * av))


def square(a):
    av = a.value
    return Tensor(av * av, (a,), lambda g: (2.0 * g * av,))


def tanh(a):
    t = np.tanh(a.value)
    return Tensor(t, (a,), lambda g: (g * (1.0 - t * t),))


def mean(a):
    n = a.value.size
    shape = a.value.shape
    return Tensor(np.mean(a.value), (a,), lambda g: (np.full(shape, g / n),))


def matmul(a, b):
    """a @ b with a (N,d), b (d,m)."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ValueError("matmul: incompatible shapes %s @ %s" % (a.shape, b.shape))
    av, bv = a.value, b.value
    return Tensor(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add_bias(x, b):
    """Row-broadcast bias add: x (N,m) + b (m,)."""
    if x.value.shape[-1] != b.value.shape[-1] or b.value.ndim != 1:
        raise ValueError("add_bias: shape mismatch %s + %s" % (x.shape, b.shape))
    return Tensor(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=tuple(range(g.ndim - 1)))))


def affine(x, w, b):
    """x @ w + b, the dense layer primitive."""
    return add_bias(matmul(x, w), b)


def scale_shift(x, a, c):
    """a*x + c with constant scalars a, c (normalization plumbing)."""
    a = float(a)
    return Tensor(a * x.value + c, (x,), lambda g: (a * g,))


def mul_const(x, c):
    """Elementwise product with a constant array of matching shape."""
    c = _as_array(c)
    if c.shape != x.value.shape:
        raise ValueError("mul_const: shape mismatch %s vs %s" % (x.shape, c.shape))
    return Tensor(x.value * c, (x,), lambda g: (g * c,))


def add_const(x, c):
    c = _as_array(c)
    return Tensor(x.value + c, (x,), lambda g: (g,))


def reshape(x, shape):
    old = x.value.shape
    return Tensor(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def take_column(x, j):
    """Column j of a 2-d tensor, shape (N,)."""
    if x.value.ndim != 2:
        raise ValueError("take_column expects a 2-d tensor")
    n, m = x.value.shape
    j = int(j)

    def vjp(g):
        out = np.zeros((n, m))
        out[:, j] = g
        return (out,)

    return Tensor(x.value[:, j], (x,), vjp)


def rowdot_const(x, c):
    """Per-row dot product with a constant matrix: sum(x*c, axis=1)."""
    c = _as_array(c)
    if c.shape != x.value.shape:
        raise ValueError("rowdot_const: shape mismatch %s vs %s" % (x.shape, c.shape))
    return Tensor(np.sum(x.value * c, axis=1), (x,), lambda g: (g[:, None] * c,))


def colscale_const(s, c):
    """Outer broadcast s[:,None]*c with s (N,) and constant c (N,m)."""
    c = _as_array(c)
    if s.value.ndim != 1 or c.shape[0] != s.value.shape[0]:
        raise ValueError("colscale_const: shape mismatch %s vs %s" % (s.shape, c.shape))
    return Tensor(s.value[:, None] * c, (s,), lambda g: (np.sum(g * c, axis=1),))


def fixed_linear_map(x, m, c=None):
    """Constant linear map m @ x + c of a 1-d tensor.

    m and c receive no gradients; the reverse pass propagates m.T @ adjoint.
    """
    m = _as_array(m)
    if x.value.ndim != 1 or m.ndim != 2 or m.shape[1] != x.value.shape[0]:
        raise ValueError("fixed_linear_map: matrix %s incompatible with input %s"
                         % (m.shape, x.shape))
    out = m @ x.value
    if c is not None:
        c = _as_array(c)
        if c.shape != out.shape:
            raise ValueError("fixed_linear_map: offset shape %s vs output %s"
                             % (c.shape, out.shape))
        out = out + c
    return Tensor(out, (x,), lambda g: (m.T @ g,))


def stack1d(tensors):
    """Stack scalar/0-d tensors into a 1-d tensor."""
    vals = np.array([t.value for t in tensors], dtype=np.float64)

    def vjp(g):
        return tuple(np.asarray(gi) for gi in g)

    return Tensor(vals, tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# parameters and the fully connected network
# ---------------------------------------------------------------------------

class ParameterSet:
    """Per-layer weights and biases with mirrored gradient storage."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases):
            raise ValueError("layer count mismatch between weights and biases")
        for k in range(len(weights) - 1):
            if weights[k].shape[1] != weights[k + 1].shape[0]:
                raise ValueError("inconsistent layer shapes at layer %d" % k)
        for w, b in zip(weights, biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias shape does not match weight columns")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def xavier(cls, layer_sizes, rng):
        """Xavier-uniform initialization for the given layer width list."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def n_layers(self):
        return len(self.weights)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        k = 0
        for arrs in (self.weights, self.biases):
            for i, a in enumerate(arrs):
                arrs[i] = vec[k:k + a.size].reshape(a.shape)
                k += a.size
        if k != vec.size:
            raise ValueError("flat vector length %d does not match parameters" % vec.size)

    def copy(self):
        return ParameterSet([w.copy() for w in self.weights],
                            [b.copy() for b in self.biases])

    def as_leaves(self):
        """Fresh leaf tensors for one forward/backward pass."""
        return ([leaf(w) for w in self.weights], [leaf(b) for b in self.biases])


def mlp_forward(weight_leaves, bias_leaves, x):
    """tanh network on a batch tensor x of shape (N, d_in), output (N, d_out).

    All hidden layers use tanh; the final layer is affine.
    """
    h = x
    last = len(weight_leaves) - 1
    for k, (w, b) in enumerate(zip(weight_leaves, bias_leaves)):
        h = affine(h, w, b)
        if k != last:
            h = tanh(h)
    return h


def forward(params, x):
    """Single-input network evaluation returning a scalar head prediction.

    Retains the graph for one reverse pass; returns (scalar Tensor, leaves).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.weights[0].shape[0]:
        raise ValueError("input dimension %s does not match first layer (%d)"
                         % (x.shape, params.weights[0].shape[0]))
    wl, bl = params.as_leaves()
    out = mlp_forward(wl, bl, constant(x[None, :]))
    return reshape(out, ()), (wl, bl)


# ---------------------------------------------------------------------------
# dense symmetric eigendecomposition
# ---------------------------------------------------------------------------

def symmetric_eigendecomposition(s):
    """Eigenpairs of a dense symmetric matrix, eigenvalues descending.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
    orthonormal. Raises ValueError for asymmetric input.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("expected a square matrix, got shape %s" % (s.shape,))
    scale = max(1.0, np.abs(s).max())
    if np.abs(s - s.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    vals, vecs = np.linalg.eigh(s)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]

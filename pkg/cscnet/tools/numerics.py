import logging
import threading
from collections import OrderedDict
from contextlib import contextmanager

import numpy as np

log = logging.getLogger(__name__)

# numeric profiles
PROFILES = {"64": np.float64, "32": np.float32}

# guard in the cosine denominator
EPS_COS = 1e-12

_recording = threading.local()


def _is_recording():
    return getattr(_recording, "on", True)


@contextmanager
def no_grad():
    """Suspends graph recording in the current thread.

    Examples:

        >>> with no_grad():
        ...     scores = model.inference_score(phi, space, catalog, 0.2)
    """
    previous = _is_recording()
    _recording.on = False
    try:
        yield
    finally:
        _recording.on = previous


def profile_dtype(profile):
    """Maps a numeric profile name ('64' or '32') to a numpy dtype."""
    try:
        return PROFILES[str(profile)]
    except KeyError:
        msg = "Numeric profile {} is not supported, use one of {}."
        log.error(msg.format(profile, sorted(PROFILES)))
        raise ValueError(msg.format(profile, sorted(PROFILES)))


class Tensor(object):
    """Dense real-valued array taking part in reverse-mode
    differentiation.

    Parameters:

        value: array like
            Tensor values

        requires_grad: boolean
            If True the tensor is a leaf whose gradient
            gets accumulated by :func:`Tensor.backward`
            Default: False

        dtype: numpy dtype or None
            Default: None (float arrays keep their dtype,
            anything else becomes float64)

    Note:

        Graphs are recorded while operations execute
        and are dropped with the output tensor, so a graph
        lives for exactly one forward pass.
    """

    def __init__(self, value, requires_grad=False, dtype=None):

        if dtype is None:
            dtype = (
                value.dtype
                if isinstance(value, np.ndarray)
                and np.issubdtype(value.dtype, np.floating)
                else np.float64
            )
        self.value = np.asarray(value, dtype=dtype)
        self.grad = np.zeros_like(self.value)
        self.requires_grad = requires_grad

        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return "Tensor(shape={}, op={})".format(self.shape, self._op)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def item(self):
        return self.value.item()

    def backward(self):
        """Accumulates d(self)/d(tensor) into the grad of every
        tensor in the recorded graph that requires a gradient.
        """
        if self.value.size != 1:
            msg = "Backward needs a scalar loss, got shape {}."
            log.error(msg.format(self.shape))
            raise ValueError(msg.format(self.shape))

        if not self.requires_grad:
            msg = (
                "Backward called on a tensor that is not part of a "
                "recorded graph."
            )
            log.error(msg)
            raise ValueError(msg)

        # iterative postorder walk
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

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


def as_tensor(x, dtype=None):
    """Wraps arrays and scalars as constant tensors."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


def _make(value, parents, backward, op):
    out = Tensor(np.asarray(value))
    if _is_recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(grad, shape):
    """Sums a broadcast gradient back to the operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand(g, shape, axis, keepdims):
    """Broadcasts the gradient of a reduction back to the input shape."""
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), backward, "add")


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.value - b.value, (a, b), backward, "sub")


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        )

    return _make(a.value * b.value, (a, b), backward, "mul")


def div(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
        )

    return _make(a.value / b.value, (a, b), backward, "div")


def neg(a):
    def backward(g):
        return (-g,)

    return _make(-a.value, (a,), backward, "neg")


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        msg = "Matmul shape mismatch: {} @ {}."
        log.error(msg.format(a.shape, b.shape))
        raise ValueError(msg.format(a.shape, b.shape))

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return _make(a.value @ b.value, (a, b), backward, "matmul")


def transpose(a):
    def backward(g):
        return (g.T,)

    return _make(a.value.T, (a,), backward, "transpose")


def linear(x, w, b):
    """Affine map w.x + b applied to a vector or to every
    row of a matrix.
    """
    x2 = x.value.reshape(-1, x.shape[-1])
    out_dim = w.shape[0]
    value = (x2 @ w.value.T + b.value).reshape(x.shape[:-1] + (out_dim,))

    def backward(g):
        g2 = g.reshape(-1, out_dim)
        return (
            (g2 @ w.value).reshape(x.shape),
            g2.T @ x2,
            g2.sum(axis=0),
        )

    return _make(value, (x, w, b), backward, "linear")


def relu(a):
    mask = a.value > 0

    def backward(g):
        return (g * mask,)

    return _make(a.value * mask, (a,), backward, "relu")


def sigmoid(a):
    # stable in both tails
    z = np.exp(-np.abs(a.value))
    s = np.where(a.value >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), backward, "sigmoid")


def exp(a):
    e = np.exp(a.value)

    def backward(g):
        return (g * e,)

    return _make(e, (a,), backward, "exp")


def ln(a):
    def backward(g):
        return (g / a.value,)

    return _make(np.log(a.value), (a,), backward, "log")


def clip(a, lo, hi):
    """Clamps values to [lo, hi]; the gradient is passed
    only where the input lies inside the interval.
    """
    inside = (a.value >= lo) & (a.value <= hi)

    def backward(g):
        return (g * inside,)

    return _make(np.clip(a.value, lo, hi), (a,), backward, "clip")


def reduce_sum(a, axis=None, keepdims=False):
    def backward(g):
        return (_expand(g, a.shape, axis, keepdims),)

    return _make(
        np.sum(a.value, axis=axis, keepdims=keepdims), (a,), backward, "sum"
    )


def reduce_mean(a, axis=None, keepdims=False):
    count = a.value.size if axis is None else a.shape[axis]
    return reduce_sum(a, axis=axis, keepdims=keepdims) / float(count)


def norm(a, axis=-1, keepdims=False):
    """Euclidean norm along an axis. The gradient of a zero
    vector is set to zero.
    """
    n = np.sqrt(np.sum(a.value * a.value, axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def backward(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (g * a.value / safe * (n > 0),)

    value = n if keepdims else np.squeeze(n, axis=axis)
    return _make(value, (a,), backward, "norm")


def concat(tensors, axis=-1):
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(
        np.concatenate([t.value for t in tensors], axis=axis),
        tensors,
        backward,
        "concat",
    )


def pair_concat(v, s):
    """Builds Concat(v_b, s_i) for every row b of v (B x p)
    and every row i of s (k x q). Returns (B*k) x (p+q),
    rows ordered sample-major.
    """
    n_rows, p = v.shape
    k, q = s.shape
    value = np.concatenate(
        [np.repeat(v.value, k, axis=0), np.tile(s.value, (n_rows, 1))],
        axis=1,
    )

    def backward(g):
        g = g.reshape(n_rows, k, p + q)
        return g[:, :, :p].sum(axis=1), g[:, :, p:].sum(axis=0)

    return _make(value, (v, s), backward, "pair_concat")


def reshape(a, shape):
    def backward(g):
        return (g.reshape(a.shape),)

    return _make(a.value.reshape(shape), (a,), backward, "reshape")


def pick(a, idx):
    """Selects a[i, idx[i]] for every row of a 2-D tensor,
    or a[idx] from a vector.
    """
    if a.ndim == 1:
        index = (int(idx),)
    else:
        index = (np.arange(a.shape[0]), np.asarray(idx, dtype=np.int64))

    def backward(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, index, g)
        return (ga,)

    return _make(a.value[index], (a,), backward, "pick")


def log_softmax(a, axis=-1):
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    out = z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _make(out, (a,), backward, "log_softmax")


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


def cosine_similarity(u, v, eps=EPS_COS):
    """Cosine similarity along the last axis,
    dot(u, v) / (|u| |v| + eps).

    Parameters:

        u, v: Tensor
            Same shape, vectors along the last axis

        eps: float
            Denominator guard, a zero vector yields 0.

    Returns:

        cos: Tensor
            Shape of the inputs without the last axis
    """
    u, v = _pair(u, v)
    if u.shape != v.shape:
        msg = "Cosine similarity needs equal shapes, got {} and {}."
        log.error(msg.format(u.shape, v.shape))
        raise ValueError(msg.format(u.shape, v.shape))
    return reduce_sum(u * v, axis=-1) / (norm(u) * norm(v) + eps)


def cosine_matrix(v, s, eps=EPS_COS):
    """Cosine similarity of every row of v (B x d) with every
    row of s (k x d), returned as B x k.
    """
    if v.shape[-1] != s.shape[-1]:
        msg = "Cosine matrix width mismatch: {} vs {}."
        log.error(msg.format(v.shape[-1], s.shape[-1]))
        raise ValueError(msg.format(v.shape[-1], s.shape[-1]))
    dots = matmul(v, transpose(s))
    nv = norm(v, keepdims=True)
    ns = reshape(norm(s), (1, s.shape[0]))
    return dots / (nv * ns + eps)


class Mlp(object):
    """Two-layer perceptron, w2.relu(w1.x + b1) + b2.

    Parameters:

        in_dim: int
            Input width

        hidden_dim: int
            Hidden width

        out_dim: int
            Output width

        random_state: numpy random state object or an integer
            Source of the initial weights. Weights are
            drawn uniformly in [-a, a], a = sqrt(6 / (fan_in + fan_out)),
            biases start at zero.
            Default: 123

        dtype: numpy dtype
            Default: np.float64

    Note:

        Every instance owns its parameters; two instances never
        share arrays.
    """

    hidden_activation = "relu"

    def __init__(
        self, in_dim, hidden_dim, out_dim, random_state=123, dtype=np.float64
    ):

        if isinstance(random_state, int):
            random_state = np.random.RandomState(random_state)

        self.in_dim = int(in_dim)
        self.hidden_dim = int(hidden_dim)
        self.out_dim = int(out_dim)

        self.w1 = Tensor(
            self._glorot(random_state, self.hidden_dim, self.in_dim),
            requires_grad=True,
            dtype=dtype,
        )
        self.b1 = Tensor(
            np.zeros(self.hidden_dim), requires_grad=True, dtype=dtype
        )
        self.w2 = Tensor(
            self._glorot(random_state, self.out_dim, self.hidden_dim),
            requires_grad=True,
            dtype=dtype,
        )
        self.b2 = Tensor(
            np.zeros(self.out_dim), requires_grad=True, dtype=dtype
        )

    @staticmethod
    def _glorot(random_state, fan_out, fan_in):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return random_state.uniform(-limit, limit, size=(fan_out, fan_in))

    def parameters(self):
        """Ordered {name: Tensor} in serialization order."""
        return OrderedDict(
            [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]
        )

    def __call__(self, x):
        return mlp_forward(self, x)


def mlp_forward(net, x):
    """Evaluates a two-layer perceptron on a vector or on
    every row of a matrix.

    Parameters:

        net: Mlp

        x: Tensor or array
            Input of shape (in,) or (rows, in)

    Returns:

        y: Tensor
            Output of shape (out,) or (rows, out)
    """
    x = as_tensor(x, dtype=net.w1.dtype)
    if x.shape[-1] != net.in_dim:
        msg = "Network input width mismatch: expected {}, got {}."
        log.error(msg.format(net.in_dim, x.shape[-1]))
        raise ValueError(msg.format(net.in_dim, x.shape[-1]))

    hidden = relu(linear(x, net.w1, net.b1))
    return linear(hidden, net.w2, net.b2)


def graph_leaves(root):
    """Ids of the gradient-requiring leaves a recorded graph
    reaches from root.
    """
    leaves = set()
    visited = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in visited:
            continue
        visited.add(id(node))
        if not node._parents and node.requires_grad:
            leaves.add(id(node))
        stack.extend(p for p in node._parents if p.requires_grad)
    return leaves


def zero_grads(params):
    for p in params.values():
        p.zero_grad()


class AdamState(object):
    """Adam moment accumulators for a named parameter set.

    Parameters:

        params: dict of Tensor
            Parameters to optimize, {name: Tensor}

        lr: float
            Learning rate

        beta1, beta2: float
            Moment decay rates
            Default: 0.9, 0.999

        eps: float
            Default: 1e-8
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):

        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0

        self.m = OrderedDict(
            (name, np.zeros_like(p.value)) for name, p in params.items()
        )
        self.v = OrderedDict(
            (name, np.zeros_like(p.value)) for name, p in params.items()
        )


def adam_step(params, state):
    """Applies one bias-corrected Adam update in place.
    Gradients are left untouched, the caller zeroes them.
    """
    if set(params) != set(state.m):
        msg = "Adam state does not match the parameter set."
        log.error(msg)
        raise ValueError(msg)
    for name, p in params.items():
        if state.m[name].shape != p.shape:
            msg = "Adam state shape {} drifted from parameter {} shape {}."
            log.error(msg.format(state.m[name].shape, name, p.shape))
            raise ValueError(msg.format(state.m[name].shape, name, p.shape))

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class GradCheckReport(object):
    """Outcome of :func:`grad_check`.

    Attributes:

        max_rel_error: float
            Largest relative error over all checked entries

        worst: tuple
            (parameter block, index) of the largest error

        block_errors: dict
            Largest relative error per parameter block

        passed: boolean
    """

    def __init__(self, block_errors, worst, tol):
        self.block_errors = block_errors
        self.worst = worst
        self.tol = tol
        self.max_rel_error = max(block_errors.values()) if block_errors else 0.0
        self.passed = self.max_rel_error < tol

    def failed_blocks(self):
        return [k for k, e in self.block_errors.items() if e >= self.tol]

    def __repr__(self):
        return "GradCheckReport(max_rel_error={:.3e}, worst={}, passed={})".format(
            self.max_rel_error, self.worst, self.passed
        )


def grad_check(f, params, step=1e-5, tol=1e-4, floor=1e-5, grad_hook=None):
    """Compares analytic gradients with central differences.

    Parameters:

        f: callable
            Returns a scalar Tensor built from params

        params: dict of Tensor
            {block name: Tensor}, 64-bit

        step: float
            Finite difference step

        tol: float
            Pass threshold on the maximum relative error

        floor: float
            Lower bound of the relative error denominator
            |a - n| / max(|a|, |n|, floor)

        grad_hook: callable or None
            grad_hook(name, grad) -> grad, applied to the
            analytic gradients before comparison

    Returns:

        report: GradCheckReport

    Note:

        Blocks the recorded graph of f does not reach are
        compared with a zero difference quotient, f is not
        evaluated for their entries.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            msg = "Gradient check needs the 64-bit profile, {} is {}."
            log.error(msg.format(name, p.dtype))
            raise ValueError(msg.format(name, p.dtype))

    zero_grads(params)
    loss = f()
    reached = graph_leaves(loss)
    loss.backward()
    analytic = OrderedDict()
    for name, p in params.items():
        grad = p.grad.copy()
        if grad_hook is not None:
            grad = grad_hook(name, grad)
        analytic[name] = grad
    zero_grads(params)

    block_errors = OrderedDict()
    worst = (None, None)
    worst_error = -1.0
    with no_grad():
        for name, p in params.items():
            block_max = 0.0
            in_graph = id(p) in reached
            for idx in np.ndindex(*p.shape):
                a = analytic[name][idx]
                if in_graph:
                    orig = p.value[idx]
                    p.value[idx] = orig + step
                    f_plus = f().item()
                    p.value[idx] = orig - step
                    f_minus = f().item()
                    p.value[idx] = orig
                else:
                    # f does not depend on blocks outside its graph
                    f_plus = f_minus = 0.0

                if not (
                    np.isfinite(f_plus) and np.isfinite(f_minus) and np.isfinite(a)
                ):
                    msg = "Non-finite value while checking {}[{}]."
                    log.error(msg.format(name, idx))
                    raise ValueError(msg.format(name, idx))

                n = (f_plus - f_minus) / (2.0 * step)
                err = abs(a - n) / max(abs(a), abs(n), floor)
                if err > block_max:
                    block_max = err
                if err > worst_error:
                    worst_error = err
                    worst = (name, idx)
            block_errors[name] = block_max

    report = GradCheckReport(block_errors, worst, tol)
    if not report.passed:
        msg = "Gradient check failed in {}, max relative error {:.3e} at {}."
        log.info(msg.format(report.failed_blocks(), report.max_rel_error, worst))
    return report

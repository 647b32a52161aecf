"""Dense-tensor reverse-mode automatic differentiation on numpy buffers.

Eager tape: every op computes its forward value immediately and, when any
input is tracked, attaches a closure holding the backward rule. `backward`
walks the recorded graph once in reverse topological order and accumulates
`d loss / d x` additively into each tracked tensor's `grad` buffer (repeated
backward calls without zeroing keep accumulating).

Everything is CPU numpy, single shape-checked code path, no fusion beyond the
`affine` convenience. Training runs in float32; gradient checks build the same
graphs in float64 (ops preserve the dtype of their inputs).

Also here because the encoders need them: the Adam optimizer, the
straight-through Gumbel-softmax estimator, the REINFORCE surrogate loss with
its moving-average baseline, and the flat named-tensor checkpoint container.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(Exception):
    pass


class NonScalarLoss(Exception):
    pass


class NonPositiveTemperature(Exception):
    pass


class UninitializedState(Exception):
    pass


class Tensor:
    """A numpy array plus an optional gradient buffer and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_GRAD_ENABLED = True


class no_grad:
    """Context that suppresses tape recording (evaluation-mode forward passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _result(data, parents, backward) -> Tensor:
    """Wrap an op result, recording the tape edge only when an input is tracked."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        return out
    return Tensor(data)


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g)  # copy: g may alias another tensor's buffer
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum g down to `shape` (the inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def parameter(shape, rng, scale: float, dtype=np.float32) -> Tensor:
    """Uniform(-scale, +scale) initialized tracked tensor."""
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def constant(value, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from None

    def backward(out):
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(out.grad, b.data.shape))

    return _result(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}") from None

    def backward(out):
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(-out.grad, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from None

    def backward(out):
        _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(out):
        _accum(a, out.grad * c)

    return _result(a.data * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(out):
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    return _result(data, (a, b), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast over rows; fused to one tape node."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatch(f"affine: {x.shape} @ {w.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeMismatch(f"affine bias: {b.shape} for {w.shape}")
    data = x.data @ w.data + b.data

    def backward(out):
        _accum(x, out.grad @ w.data.T)
        _accum(w, x.data.T @ out.grad)
        _accum(b, out.grad.sum(axis=0))

    return _result(data, (x, w, b), backward)


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat axis {axis}: {[p.shape for p in parts]}") from None
    sizes = [p.data.shape[axis] for p in parts]

    def backward(out):
        offset = 0
        for p, size in zip(parts, sizes):
            index = [np.s_[:]] * out.grad.ndim
            index[axis] = np.s_[offset:offset + size]
            _accum(p, out.grad[tuple(index)])
            offset += size

    return _result(data, tuple(parts), backward)


def slice_axis(t: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    axis = axis % t.data.ndim
    index = [np.s_[:]] * t.data.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)
    data = t.data[index]

    def backward(out):
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad[index] += out.grad

    return _result(data, (t,), backward)


def reshape(t: Tensor, shape) -> Tensor:
    data = t.data.reshape(shape)

    def backward(out):
        _accum(t, out.grad.reshape(t.data.shape))

    return _result(data, (t,), backward)


def sigmoid(t: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # exp overflow saturates to the exact limit
        data = 1.0 / (1.0 + np.exp(-t.data))

    def backward(out):
        _accum(t, out.grad * data * (1.0 - data))

    return _result(data, (t,), backward)


def tanh(t: Tensor) -> Tensor:
    data = np.tanh(t.data)

    def backward(out):
        _accum(t, out.grad * (1.0 - data * data))

    return _result(data, (t,), backward)


def relu(t: Tensor) -> Tensor:
    data = np.maximum(t.data, 0.0)

    def backward(out):
        _accum(t, out.grad * (data > 0.0))

    return _result(data, (t,), backward)


def _softmax(z, axis):
    z = z - z.max(axis=axis, keepdims=True)
    with np.errstate(under="ignore"):
        e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    data = _softmax(t.data, axis)

    def backward(out):
        dot = (out.grad * data).sum(axis=axis, keepdims=True)
        _accum(t, data * (out.grad - dot))

    return _result(data, (t,), backward)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    z = t.data - t.data.max(axis=axis, keepdims=True)
    data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(out):
        total = out.grad.sum(axis=axis, keepdims=True)
        _accum(t, out.grad - np.exp(data) * total)

    return _result(data, (t,), backward)


def take_rows(t: Tensor, indices) -> Tensor:
    """Row gather (embedding lookup); backward scatter-adds into used rows."""
    indices = np.asarray(indices, dtype=np.int64)
    if t.data.ndim != 2:
        raise ShapeMismatch(f"take_rows expects a matrix, got {t.shape}")
    data = t.data[indices]

    def backward(out):
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        np.add.at(t.grad, indices, out.grad)

    return _result(data, (t,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.data.shape[1]):
        raise ShapeMismatch(f"cross_entropy: label out of range for {logits.shape}")
    n = labels.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    data = -logp[np.arange(n), labels].mean()

    def backward(out):
        g = np.exp(logp)
        g[np.arange(n), labels] -= 1.0
        _accum(logits, g * (out.grad / n))

    return _result(data, (logits,), backward)


def sum_all(t: Tensor) -> Tensor:
    def backward(out):
        _accum(t, np.full_like(t.data, out.grad))

    return _result(t.data.sum(), (t,), backward)


def mean_all(t: Tensor) -> Tensor:
    size = t.data.size

    def backward(out):
        _accum(t, np.full_like(t.data, out.grad / size))

    return _result(t.data.mean(), (t,), backward)


def add_n(tensors) -> Tensor:
    """Sum of same-shape tensors as a single tape node."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("add_n of zero tensors")
    data = tensors[0].data.copy()
    for t in tensors[1:]:
        if t.data.shape != data.shape:
            raise ShapeMismatch(f"add_n: {t.shape} vs {data.shape}")
        data += t.data

    def backward(out):
        for t in tensors:
            _accum(t, out.grad)

    return _result(data, tuple(tensors), backward)


def dropout(t: Tensor, p: float, rng, training: bool) -> Tensor:
    """Inverted dropout; identity when eval-mode or p == 0."""
    if not training or p <= 0.0:
        return t
    keep = (rng.random(t.data.shape) >= p) / (1.0 - p)
    keep = keep.astype(t.data.dtype)

    def backward(out):
        _accum(t, out.grad * keep)

    return _result(t.data * keep, (t,), backward)


def detach(t: Tensor) -> Tensor:
    """Forward the value, block the gradient."""
    return Tensor(t.data)


# ---------------------------------------------------------------------------
# fused recurrent cells
#
# The stack machines run these thousands of times per example, so each cell is
# one tape node with a hand-derived backward instead of ~15 composed
# primitives. States travel packed as (B, 2D) = [h | c]; the packing keeps
# multi-output cells single-output. Gradient checks cover the fused rules the
# same way they cover every primitive.
# ---------------------------------------------------------------------------

def _sigmoid_np(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def treelstm_leaf(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Leaf cell: input/output gates plus candidate; (B, D) -> packed (B, 2D)."""
    if x.data.ndim != 2 or w.data.shape[0] != x.data.shape[1] or w.data.shape[1] % 3:
        raise ShapeMismatch(f"treelstm_leaf: x {x.shape}, w {w.shape}")
    d = w.data.shape[1] // 3
    pre = x.data @ w.data + b.data
    i = _sigmoid_np(pre[:, :d])
    o = _sigmoid_np(pre[:, d:2 * d])
    g = np.tanh(pre[:, 2 * d:])
    c = i * g
    tc = np.tanh(c)
    h = o * tc
    data = np.concatenate([h, c], axis=1)

    def backward(out):
        gh = out.grad[:, :d]
        gc = out.grad[:, d:]
        do = gh * tc
        dc = gc + gh * o * (1.0 - tc * tc)
        dpre = np.concatenate(
            [dc * g * i * (1.0 - i), do * o * (1.0 - o), dc * i * (1.0 - g * g)], axis=1
        )
        _accum(w, x.data.T @ dpre)
        _accum(b, dpre.sum(axis=0))
        _accum(x, dpre @ w.data.T)

    return _result(data, (x, w, b), backward)


def treelstm_cell(left: Tensor, right: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Binary TreeLSTM composition over packed (B, 2D) child states.

    Gates [input, forget-left, forget-right, output, candidate] from the two
    child h states; the two forget gates weight the child cell states.
    """
    if left.data.shape != right.data.shape or left.data.ndim != 2:
        raise ShapeMismatch(f"treelstm_cell: {left.shape} vs {right.shape}")
    d = left.data.shape[1] // 2
    if w.data.shape != (2 * d, 5 * d) or b.data.shape != (5 * d,):
        raise ShapeMismatch(f"treelstm_cell: w {w.shape}, b {b.shape} for dim {d}")
    hl, cl = left.data[:, :d], left.data[:, d:]
    hr, cr = right.data[:, :d], right.data[:, d:]
    x = np.concatenate([hl, hr], axis=1)
    pre = x @ w.data + b.data
    i = _sigmoid_np(pre[:, :d])
    fl = _sigmoid_np(pre[:, d:2 * d])
    fr = _sigmoid_np(pre[:, 2 * d:3 * d])
    o = _sigmoid_np(pre[:, 3 * d:4 * d])
    g = np.tanh(pre[:, 4 * d:])
    c = fl * cl + fr * cr + i * g
    tc = np.tanh(c)
    h = o * tc
    data = np.concatenate([h, c], axis=1)

    def backward(out):
        gh = out.grad[:, :d]
        gc = out.grad[:, d:]
        do = gh * tc
        dc = gc + gh * o * (1.0 - tc * tc)
        dpre = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * cl * fl * (1.0 - fl),
                dc * cr * fr * (1.0 - fr),
                do * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        _accum(w, x.T @ dpre)
        _accum(b, dpre.sum(axis=0))
        dx = dpre @ w.data.T
        _accum(left, np.concatenate([dx[:, :d], dc * fl], axis=1))
        _accum(right, np.concatenate([dx[:, d:], dc * fr], axis=1))

    return _result(data, (left, right, w, b), backward)


def lstm_cell(x: Tensor, state: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """One LSTM step over a packed (B, 2D) state; gates [i, f, o, g]."""
    if x.data.ndim != 2 or state.data.ndim != 2 or state.data.shape[1] % 2:
        raise ShapeMismatch(f"lstm_cell: x {x.shape}, state {state.shape}")
    d = state.data.shape[1] // 2
    if w.data.shape != (x.data.shape[1] + d, 4 * d) or b.data.shape != (4 * d,):
        raise ShapeMismatch(f"lstm_cell: w {w.shape}, b {b.shape} for dim {d}")
    h, c = state.data[:, :d], state.data[:, d:]
    xh = np.concatenate([x.data, h], axis=1)
    pre = xh @ w.data + b.data
    i = _sigmoid_np(pre[:, :d])
    f = _sigmoid_np(pre[:, d:2 * d])
    o = _sigmoid_np(pre[:, 2 * d:3 * d])
    g = np.tanh(pre[:, 3 * d:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    data = np.concatenate([o * tc, c_new], axis=1)

    def backward(out):
        gh = out.grad[:, :d]
        gc = out.grad[:, d:]
        do = gh * tc
        dc = gc + gh * o * (1.0 - tc * tc)
        dpre = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c * f * (1.0 - f),
                do * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        _accum(w, xh.T @ dpre)
        _accum(b, dpre.sum(axis=0))
        dxh = dpre @ w.data.T
        nx = x.data.shape[1]
        _accum(x, dxh[:, :nx])
        _accum(state, np.concatenate([dxh[:, nx:], dc * f], axis=1))

    return _result(data, (x, state, w, b), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate d loss / d x for every tracked tensor reachable from `loss`."""
    if loss.data.ndim != 0:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Standard Adam with bias correction over a name -> Tensor parameter dict.

    `l2` adds gradient-side weight decay (`grad += l2 * param`) before the
    moment updates. `step()` consumes and clears the gradients.
    """

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, l2: float = 0.0):
        if not params:
            raise UninitializedState("no parameters to optimize")
        for name, p in params.items():
            if not p.requires_grad:
                raise UninitializedState(f"parameter {name!r} is not tracked")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.l2 = l2
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.l2:
                g = g + self.l2 * p.data
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= self.lr * update
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# stochastic estimators
# ---------------------------------------------------------------------------

def gumbel_softmax_st(logits: Tensor, temperature: float, rng) -> Tensor:
    """Hard one-hot sample in the forward pass, soft softmax gradient backward.

    Perturbs the logits with Gumbel noise (skipped when `rng` is None, which
    makes the choice a deterministic argmax), divides by the temperature, and
    emits the one-hot argmax. The backward rule is the Jacobian-vector product
    of the *soft* tempered softmax, so selection stays discrete while the
    score parameters still receive a dense gradient.
    """
    if temperature <= 0.0:
        raise NonPositiveTemperature(f"temperature {temperature}")
    if logits.data.ndim != 1 or logits.data.shape[0] < 1:
        raise ShapeMismatch(f"gumbel_softmax_st expects a nonempty vector, got {logits.shape}")
    z = logits.data.astype(np.float64)
    if rng is not None:
        u = rng.random(z.shape)
        z = z - np.log(-np.log(u + 1e-20) + 1e-20)
    z = z / temperature
    soft = _softmax(z, axis=-1)
    hard = np.zeros_like(logits.data)
    hard[int(np.argmax(z))] = 1.0

    def backward(out):
        dot = float(out.grad @ soft)
        _accum(logits, (soft * (out.grad - dot) / temperature).astype(logits.data.dtype))

    return _result(hard, (logits,), backward)


def reinforce_loss(action_log_probs, reward: float, baseline: float) -> Tensor:
    """Score-function surrogate: -(reward - baseline) * sum of log-probs.

    Reward and baseline are plain floats, never differentiated. The returned
    scalar's gradient pushes chosen-action log-probabilities up when the
    reward beats the baseline and down otherwise.
    """
    log_probs = list(action_log_probs)
    advantage = float(reward) - float(baseline)
    if not log_probs:
        return constant(0.0)
    total = log_probs[0] if len(log_probs) == 1 else add_n(log_probs)
    return scale(total, -advantage)


def moving_baseline(prev: float, reward: float, decay: float = 0.9) -> float:
    """Exponential moving average of the reward."""
    return decay * float(prev) + (1.0 - decay) * float(reward)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

_MANIFEST_HEADER = "listops-tensors v1"


def save_tensors(path, named_arrays: dict) -> None:
    """Write named arrays as one flat little-endian binary plus a manifest.

    The binary at `path` is the concatenation of each array's raw values in
    name order; `path + '.manifest'` lists `name dtype shape offset` per line.
    """
    path = str(path)
    manifest_lines = [_MANIFEST_HEADER]
    offset = 0
    with open(path, "wb") as f:
        for name in sorted(named_arrays):
            arr = np.asarray(named_arrays[name])
            if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d to 1-d
                arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = le.tobytes()
            shape = ",".join(str(s) for s in arr.shape) or "scalar"
            manifest_lines.append(f"{name} {le.dtype.str} {shape} {offset}")
            f.write(raw)
            offset += len(raw)
    with open(path + ".manifest", "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(manifest_lines) + "\n")


def load_tensors(path) -> dict:
    path = str(path)
    with open(path + ".manifest", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _MANIFEST_HEADER:
        raise ValueError(f"{path}.manifest: not a tensor manifest")
    raw = np.fromfile(path, dtype=np.uint8)
    out = {}
    for line in lines[1:]:
        if not line:
            continue
        name, dtype_str, shape_str, offset_str = line.split(" ")
        dtype = np.dtype(dtype_str)
        shape = () if shape_str == "scalar" else tuple(int(s) for s in shape_str.split(","))
        count = int(np.prod(shape)) if shape else 1
        start = int(offset_str)
        stop = start + count * dtype.itemsize
        out[name] = raw[start:stop].view(dtype).reshape(shape).copy()
    return out

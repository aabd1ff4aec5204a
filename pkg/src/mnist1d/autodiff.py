"""Reverse-mode automatic differentiation over dense float64 tensors.

A :class:`Tape` records every operation touching an attached tensor as an
append-only node list; insertion order is topological order, and
:func:`grad` sweeps the tape once in reverse.  Backward rules are written in
terms of the same primitives, so calling ``grad(..., create_graph=True)``
records the gradient computation itself and higher-order derivatives come out
of the same machinery.  Tensors from different tapes may never meet in one op.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import DimensionError, UsageError

_STATE = threading.local()


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


class no_grad:
    """Context manager that suspends tape recording on this thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


class Node:
    __slots__ = ("op", "parents", "backward", "first_order_only")

    def __init__(self, op, parents, backward, first_order_only=False):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.first_order_only = first_order_only


class Tape:
    """Append-only record of operations; node index == topological position."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


class Tensor:
    """Dense float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "nid")

    def __init__(self, data, tape: Tape | None = None, nid: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.tape = tape
        self.nid = nid

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def attached(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def watch(self, tape: Tape) -> "Tensor":
        """Return a view of this tensor attached to ``tape`` as a fresh leaf."""
        return leaf(self.data, tape)

    def __repr__(self) -> str:
        state = "attached" if self.attached else "detached"
        return f"Tensor(shape={self.shape}, {state})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return slice_(self, key)


def tensor(data) -> Tensor:
    """Detached constant tensor."""
    return Tensor(data)


def leaf(data, tape: Tape) -> Tensor:
    """Tensor attached to ``tape`` as a differentiable leaf."""
    t = Tensor(data, tape)
    t.nid = tape._append(Node("leaf", (), None))
    return t


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(op, data, inputs, backward, first_order_only=False) -> Tensor:
    """Wrap an op result, recording a node when any input is attached."""
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise UsageError(f"op {op!r} mixes tensors from two different tapes")
    if tape is None or not _grad_enabled():
        return Tensor(data)
    parents = tuple(t.nid if t.tape is not None else -1 for t in inputs)
    out = Tensor(data, tape)
    out.nid = tape._append(Node(op, parents, backward, first_order_only))
    return out


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def _sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcasted cotangent back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    return _result("add", data, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data
    return _result("sub", data, (a, b), lambda g: (_sum_to(g, a.shape), neg(_sum_to(g, b.shape))))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (mul(g, -1.0),))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    return _result(
        "mul", data, (a, b), lambda g: (_sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape))
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def backward(g):
        ga = _sum_to(div(g, b), a.shape)
        gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _result("div", data, (a, b), backward)


def pow_(a, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = _as_tensor(a)
    data = a.data**exponent

    def backward(g):
        return (mul(mul(g, exponent), pow_(a, exponent - 1.0)),)

    return _result("pow", data, (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)
    out = _result("sqrt", out_data, (a,), None)

    def backward(g):
        if np.all(out_data > 0):
            return (div(mul(g, 0.5), out),)
        # subgradient 0 where the input is exactly 0 (kept constant there)
        safe = np.where(out_data > 0, 0.5 / np.where(out_data > 0, out_data, 1.0), 0.0)
        return (mul(g, Tensor(safe)),)

    if out.tape is not None:
        out.tape.nodes[out.nid].backward = backward
    return out


# ----------------------------------------------------------------------------
# nonlinearities


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = _result("exp", np.exp(a.data), (a,), None)
    if out.tape is not None:
        out.tape.nodes[out.nid].backward = lambda g: (mul(g, out),)
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _result("log", np.log(a.data), (a,), lambda g: (div(g, a),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = _result("tanh", np.tanh(a.data), (a,), None)
    if out.tape is not None:
        out.tape.nodes[out.nid].backward = lambda g: (mul(g, sub(1.0, mul(out, out))),)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = _result("sigmoid", data, (a,), None)
    if out.tape is not None:
        out.tape.nodes[out.nid].backward = lambda g: (mul(g, mul(out, sub(1.0, out))),)
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _result("relu", a.data * mask, (a,), lambda g: (mul(g, Tensor(mask)),))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    data = np.where(pos, a.data, alpha * np.expm1(a.data))
    pos_mask = pos.astype(np.float64)
    neg_mask = 1.0 - pos_mask

    def backward(g):
        # d/dx = 1 for x>0, alpha*exp(x) otherwise; exp path stays on-tape
        local = add(Tensor(pos_mask), mul(mul(Tensor(neg_mask), alpha), exp(a)))
        return (mul(g, local),)

    return _result("elu", data, (a,), backward)


def swish(a) -> Tensor:
    """x * sigmoid(x), composed from primitives."""
    a = _as_tensor(a)
    return mul(a, sigmoid(a))


# ----------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (reshape(g, a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _result(
        "transpose", np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inverse),)
    )


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = np.broadcast_to(a.data, shape).copy()
    return _result("broadcast_to", data, (a,), lambda g: (_sum_to(g, a.shape),))


def slice_(a, key) -> Tensor:
    a = _as_tensor(a)
    data = a.data[key]
    if np.shares_memory(data, a.data):
        data = data.copy()
    return _result("slice", data, (a,), lambda g: (_scatter(g, key, a.shape),))


def _scatter(g, key, shape) -> Tensor:
    """Adjoint of ``slice_``: place ``g`` into zeros of ``shape`` at ``key``."""
    g = _as_tensor(g)
    data = np.zeros(shape)
    data[key] = g.data
    return _result("scatter", data, (g,), lambda h: (slice_(h, key),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def backward(g):
        outs = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            key = [slice(None)] * g.ndim
            key[axis] = slice(int(start), int(stop))
            outs.append(slice_(g, tuple(key)))
        return tuple(outs)

    return _result("concat", data, tuple(tensors), backward)


def gather_rows(a, indices) -> Tensor:
    """Select rows of ``a`` by integer index (duplicates allowed)."""
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    return _result(
        "gather_rows", a.data[indices], (a,), lambda g: (_scatter_rows(g, indices, a.shape),)
    )


def _scatter_rows(g, indices, shape) -> Tensor:
    """Adjoint of ``gather_rows``: accumulate rows of ``g`` at ``indices``."""
    g = _as_tensor(g)
    data = np.zeros(shape)
    np.add.at(data, indices, g.data)
    return _result("scatter_rows", data, (g,), lambda h: (gather_rows(h, indices),))


# ----------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (broadcast_to(reshape(g, (1,) * a.ndim), a.shape),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            kd_shape = list(a.shape)
            for ax in axes:
                kd_shape[ax] = 1
            g = reshape(g, tuple(kd_shape))
        return (broadcast_to(g, a.shape),)

    return _result("sum", data, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def max_reduce(a, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; ties route the gradient to the first maximum."""
    a = _as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)
    if axis is None:
        mask = np.zeros(a.shape)
        mask.flat[int(np.argmax(a.data))] = 1.0
    else:
        am = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        mask = np.zeros(a.shape)
        np.put_along_axis(mask, am, 1.0, axis=axis)

    def backward(g):
        if axis is None:
            g = reshape(g, (1,) * a.ndim)
        elif not keepdims:
            kd_shape = list(a.shape)
            kd_shape[axis] = 1
            g = reshape(g, tuple(kd_shape))
        return (mul(broadcast_to(g, a.shape), Tensor(mask)),)

    return _result("max_reduce", data, (a,), backward)


# ----------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects (..., n, k) @ (k, m); got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = matmul(g, transpose(b))
        k, m = b.shape
        gb = matmul(transpose(reshape(a, (-1, k))), reshape(g, (-1, m)))
        return ga, gb

    return _result("matmul", data, (a, b), backward)


def unfold1d(x, kernel_size: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Extract sliding windows: (B, C, L) -> (B, C, L_out, K)."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"unfold1d expects (batch, channels, length), got {x.shape}")
    if stride < 1 or padding < 0:
        raise UsageError(f"need stride >= 1 and padding >= 0, got ({stride}, {padding})")
    length = x.shape[2] + 2 * padding
    if length < kernel_size:
        raise DimensionError(f"kernel {kernel_size} longer than padded input {length}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, kernel_size, axis=2)[:, :, ::stride]
    data = np.ascontiguousarray(windows)

    def backward(g):
        return (fold1d(g, x.shape[2], stride, padding),)

    return _result("unfold1d", data, (x,), backward)


def fold1d(g, out_length: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`unfold1d`: scatter-add windows back onto the signal."""
    g = _as_tensor(g)
    batch, channels, n_windows, kernel_size = g.shape
    padded = np.zeros((batch, channels, out_length + 2 * padding))
    starts = np.arange(n_windows) * stride
    for k in range(kernel_size):
        padded[:, :, starts + k] += g.data[:, :, :, k]
    data = padded[:, :, padding : padding + out_length] if padding else padded

    def backward(h):
        return (unfold1d(h, kernel_size, stride, padding),)

    return _result("fold1d", np.ascontiguousarray(data), (g,), backward)


def conv1d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (B, C_in, L) with (C_out, C_in, K) filters."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if kernel.ndim != 3:
        raise DimensionError(f"conv1d kernel must be (out, in, k), got {kernel.shape}")
    if x.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv1d input {x.shape} incompatible with kernel {kernel.shape}")
    c_out, c_in, k = kernel.shape
    windows = unfold1d(x, k, stride, padding)  # (B, C_in, L_out, K)
    batch, _, l_out, _ = windows.shape
    cols = reshape(transpose(windows, (0, 2, 1, 3)), (batch, l_out, c_in * k))
    out = matmul(cols, transpose(reshape(kernel, (c_out, c_in * k))))  # (B, L_out, C_out)
    return transpose(out, (0, 2, 1))


def softmax(a, axis: int = -1) -> Tensor:
    """Shift-stabilized softmax built from primitives."""
    a = _as_tensor(a)
    shift = Tensor(a.data.max(axis=axis, keepdims=True))  # constant; softmax is shift-invariant
    e = exp(sub(a, shift))
    return div(e, sum_(e, axis=axis, keepdims=True))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    centered = sub(a, shift)
    return sub(centered, log(sum_(exp(centered), axis=axis, keepdims=True)))


# ----------------------------------------------------------------------------
# fused recurrent scan (first-order only, for speed)


def gru_scan(x, w_ih, b_ih, w_hh, b_hh) -> Tensor:
    """Run a scalar-input GRU over (B, T), returning the final hidden state.

    Gate order is (reset, update, candidate); the candidate's hidden
    contribution is gated as r * (U_n h + b_n).  Forward and backward are
    fused numpy loops recorded as a single tape node, so this op cannot sit
    under ``create_graph=True``.
    """
    x, w_ih, b_ih, w_hh, b_hh = map(_as_tensor, (x, w_ih, b_ih, w_hh, b_hh))
    hidden = w_hh.shape[1]
    if w_hh.shape != (3 * hidden, hidden) or w_ih.shape != (3 * hidden,):
        raise DimensionError(f"gru_scan weights inconsistent: {w_ih.shape}, {w_hh.shape}")
    batch, steps = x.shape
    h = np.zeros((batch, hidden))
    gi_all = x.data[:, :, None] * w_ih.data[None, None, :] + b_ih.data  # (B, T, 3H)
    u_t = w_hh.data.T
    saved = []
    for t in range(steps):
        gh = h @ u_t + b_hh.data  # (B, 3H)
        pre_r = gi_all[:, t, :hidden] + gh[:, :hidden]
        pre_z = gi_all[:, t, hidden : 2 * hidden] + gh[:, hidden : 2 * hidden]
        r = 1.0 / (1.0 + np.exp(-pre_r))
        z = 1.0 / (1.0 + np.exp(-pre_z))
        gh_n = gh[:, 2 * hidden :]
        n = np.tanh(gi_all[:, t, 2 * hidden :] + r * gh_n)
        h_new = (1.0 - z) * n + z * h
        saved.append((h, r, z, n, gh_n))
        h = h_new

    def backward(g):
        dh = np.ascontiguousarray(g.data)
        d_gi_all = np.zeros_like(gi_all)
        dw_hh = np.zeros_like(w_hh.data)
        db_hh = np.zeros_like(b_hh.data)
        for t in range(steps - 1, -1, -1):
            h_prev, r, z, n, gh_n = saved[t]
            dz = dh * (h_prev - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            dn_pre = dn * (1.0 - n * n)
            d_ghn = dn_pre * r
            dr = dn_pre * gh_n
            dr_pre = dr * r * (1.0 - r)
            dz_pre = dz * z * (1.0 - z)
            d_gi_all[:, t, :hidden] = dr_pre
            d_gi_all[:, t, hidden : 2 * hidden] = dz_pre
            d_gi_all[:, t, 2 * hidden :] = dn_pre
            d_gh = np.concatenate([dr_pre, dz_pre, d_ghn], axis=1)
            dw_hh += d_gh.T @ h_prev
            db_hh += d_gh.sum(axis=0)
            dh_prev += d_gh @ w_hh.data
            dh = dh_prev
        dx = d_gi_all @ w_ih.data
        dw_ih = (d_gi_all * x.data[:, :, None]).sum(axis=(0, 1))
        db_ih = d_gi_all.sum(axis=(0, 1))
        return (Tensor(dx), Tensor(dw_ih), Tensor(db_ih), Tensor(dw_hh), Tensor(db_hh))

    return _result("gru_scan", h, (x, w_ih, b_ih, w_hh, b_hh), backward, first_order_only=True)


# ----------------------------------------------------------------------------
# differentiation


def grad(output: Tensor, inputs: list[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Differentiate a scalar ``output`` with respect to ``inputs``.

    With ``create_graph=True`` the returned gradients are attached to the same
    tape and can themselves be differentiated.  Cotangents are only propagated
    through nodes that can reach one of ``inputs``; since parents always carry
    lower node ids, everything below the lowest input id is pruned outright,
    which keeps repeated grad calls on a growing tape (unrolled training
    loops) linear instead of quadratic.
    """
    if not isinstance(output, Tensor) or output.tape is None:
        raise UsageError("grad needs an attached (non-detached) scalar output")
    if output.data.size != 1:
        raise UsageError(f"grad output must be scalar, got shape {output.shape}")
    tape = output.tape
    for t in inputs:
        if t.tape is None:
            raise UsageError("grad input is detached and can never receive gradients")
        if t.tape is not tape:
            raise UsageError("grad input lives on a different tape than the output")
    if not inputs:
        return []

    input_ids = {t.nid for t in inputs}
    min_input = min(input_ids)
    reach_memo: dict[int, bool] = {nid: True for nid in input_ids}
    nodes = tape.nodes

    def reaches(start: int) -> bool:
        """Whether node ``start`` has some input among its ancestors."""
        cached = reach_memo.get(start)
        if cached is not None:
            return cached
        stack = [start]
        while stack:
            cur = stack[-1]
            if cur in reach_memo:
                stack.pop()
                continue
            result = False
            unresolved = None
            for p in nodes[cur].parents:
                if p < min_input:  # also skips detached (-1) parents
                    continue
                r = reach_memo.get(p)
                if r is None:
                    if unresolved is None:
                        unresolved = []
                    unresolved.append(p)
                elif r:
                    result = True
                    break
            if result or not unresolved:
                reach_memo[cur] = result
                stack.pop()
            else:
                stack.extend(unresolved)
        return reach_memo[start]

    cotangents: dict[int, Tensor] = {}
    if output.nid >= min_input and reaches(output.nid):
        cotangents[output.nid] = Tensor(np.ones(output.shape))

    def sweep():
        for nid in range(output.nid, min_input - 1, -1):
            g = cotangents.get(nid) if nid in input_ids else cotangents.pop(nid, None)
            if g is None:
                continue
            node = nodes[nid]
            if node.backward is None:
                continue
            if create_graph and node.first_order_only:
                raise UsageError(f"op {node.op!r} does not support create_graph=True")
            for pid, pg in zip(node.parents, node.backward(g)):
                if pid < min_input or pg is None or not reaches(pid):
                    continue
                acc = cotangents.get(pid)
                cotangents[pid] = pg if acc is None else add(acc, pg)

    if create_graph:
        sweep()
    else:
        with no_grad():
            sweep()

    return [cotangents.get(t.nid, Tensor(np.zeros(t.shape))) for t in inputs]

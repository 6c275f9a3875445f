"""Dense tensors with taped reverse-mode gradients.

Values are stored as row-major float32 arrays. Reductions (matmul, dot,
sums) accumulate in float64 before casting back to the storage dtype.
Gradient checking runs the whole graph in a float64 compute mode so that
central differences are not drowned by float32 rounding; see `precision`.

Ops record a backward closure onto the active `Tape`; `Tape.backward`
replays the closures in exact reverse execution order. Only scalar
broadcast is supported -- mismatched shapes raise `ShapeError` instead of
broadcasting implicitly.
"""

from __future__ import annotations

import contextlib

import numpy as np

STORAGE_DTYPE = np.float32
LOG_FLOOR = 1e-12

_tape = None
_compute_dtype = np.dtype(np.float32)


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class EvaluationError(RuntimeError):
    """A graph evaluated to a non-finite or non-scalar value where a finite scalar was required."""


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the compute dtype (float64 for verification runs)."""
    global _compute_dtype
    prev = _compute_dtype
    _compute_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _compute_dtype = prev


def compute_dtype():
    return _compute_dtype


class Tensor:
    """Immutable-by-convention dense array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_compute_dtype)
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.ndim != 0:
            raise ShapeError(f"item() requires a scalar, got shape {self.data.shape}")
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Learnable tensor; its gradient persists across a tape's backward pass."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


class Tape:
    """Execution record of ops; backward replays them newest-first.

    Use as a context manager around the forward pass, then call
    `backward(loss)` on a scalar output. Ops executed while no tape is
    active do not record and propagate requires_grad=False.
    """

    def __init__(self):
        self._nodes = []
        self._prev = None

    def __enter__(self):
        global _tape
        self._prev = _tape
        _tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _tape
        _tape = self._prev
        return False

    def record(self, fn):
        self._nodes.append(fn)

    def backward(self, loss: Tensor):
        if loss.data.ndim != 0:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for fn in reversed(self._nodes):
            fn()

    def __len__(self):
        return len(self._nodes)


def _tracking(*tensors) -> bool:
    return _tape is not None and any(t.requires_grad for t in tensors)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=_compute_dtype)
    t.grad += g


def _out_grad(t: Tensor):
    return t.grad


def _mm64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # matmul with float64 accumulation
    return np.matmul(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False))


def _cast(a: np.ndarray) -> np.ndarray:
    return a.astype(_compute_dtype, copy=False)


def _d(t: Tensor) -> np.ndarray:
    return t.data.astype(_compute_dtype, copy=False)


def _require_rank(t: Tensor, rank: int, op: str):
    if t.data.ndim != rank:
        raise ShapeError(f"{op}: expected rank-{rank} operand, got shape {t.data.shape}")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_rank(a, 2, "matmul")
    _require_rank(b, 2, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    ad, bd = _d(a), _d(b)
    out = Tensor(_cast(_mm64(ad, bd)))
    if _tracking(a, b):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            if a.requires_grad:
                _accum(a, _cast(_mm64(g, bd.T)))
            if b.requires_grad:
                _accum(b, _cast(_mm64(ad.T, g)))

        _tape.record(backward)
    return out


def vecmat(v: Tensor, m: Tensor) -> Tensor:
    """Row-vector times matrix: [k] x [k,n] -> [n]."""
    _require_rank(v, 1, "vecmat")
    _require_rank(m, 2, "vecmat")
    if v.shape[0] != m.shape[0]:
        raise ShapeError(f"vecmat: inner dimensions disagree for shapes {v.shape} and {m.shape}")
    vd, md = _d(v), _d(m)
    out = Tensor(_cast(_mm64(vd[None, :], md)[0]))
    if _tracking(v, m):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            if v.requires_grad:
                _accum(v, _cast(_mm64(g[None, :], md.T)[0]))
            if m.requires_grad:
                _accum(m, _cast(np.outer(vd.astype(np.float64), g.astype(np.float64))))

        _tape.record(backward)
    return out


def dot(u: Tensor, v: Tensor) -> Tensor:
    _require_rank(u, 1, "dot")
    _require_rank(v, 1, "dot")
    if u.shape != v.shape:
        raise ShapeError(f"dot: shapes {u.shape} and {v.shape} differ")
    ud, vd = _d(u), _d(v)
    out = Tensor(_cast(np.dot(ud.astype(np.float64), vd.astype(np.float64))))
    if _tracking(u, v):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            if u.requires_grad:
                _accum(u, g * vd)
            if v.requires_grad:
                _accum(v, g * ud)

        _tape.record(backward)
    return out


def transpose(a: Tensor) -> Tensor:
    _require_rank(a, 2, "transpose")
    out = Tensor(np.ascontiguousarray(_d(a).T))
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, np.ascontiguousarray(g.T))

        _tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# elementwise


def _binary_elementwise(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_elementwise(a, b, "add")
    out = Tensor(_d(a) + _d(b))
    if _tracking(a, b):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            _accum(a, g)
            _accum(b, g)

        _tape.record(backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_elementwise(a, b, "mul")
    ad, bd = _d(a), _d(b)
    out = Tensor(ad * bd)
    if _tracking(a, b):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g * bd)
            if b.requires_grad:
                _accum(b, g * ad)

        _tape.record(backward)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_elementwise(a, b, "div")
    ad, bd = _d(a), _d(b)
    out = Tensor(ad / bd)
    if _tracking(a, b):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g / bd)
            if b.requires_grad:
                _accum(b, -g * ad / (bd * bd))

        _tape.record(backward)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(_d(a) * _compute_dtype.type(c))
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g * _compute_dtype.type(c))

        _tape.record(backward)
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(_d(a) + _compute_dtype.type(float(c)))
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g)

        _tape.record(backward)
    return out


def scale_t(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar tensor (gradient flows to both)."""
    if s.data.ndim != 0:
        raise ShapeError(f"scale_t: scale factor must be a scalar, got shape {s.data.shape}")
    ad, sd = _d(a), _d(s)
    out = Tensor(ad * sd)
    if _tracking(a, s):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g * sd)
            if s.requires_grad:
                _accum(s, _cast(np.sum(g.astype(np.float64) * ad.astype(np.float64))))

        _tape.record(backward)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of an [m, n] matrix."""
    _require_rank(x, 2, "add_bias")
    _require_rank(b, 1, "add_bias")
    if x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: column count {x.shape} does not match bias {b.shape}")
    out = Tensor(_d(x) + _d(b)[None, :])
    if _tracking(x, b):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            if x.requires_grad:
                _accum(x, g)
            if b.requires_grad:
                _accum(b, _cast(np.sum(g.astype(np.float64), axis=0)))

        _tape.record(backward)
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(_d(a)))
    if _tracking(a):
        out.requires_grad = True
        od = out.data

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g * od)

        _tape.record(backward)
    return out


def log(a: Tensor) -> Tensor:
    """Natural log with the argument floored at LOG_FLOOR; floored entries get zero gradient."""
    ad = _d(a)
    floored = np.maximum(ad, _compute_dtype.type(LOG_FLOOR))
    out = Tensor(np.log(floored))
    if _tracking(a):
        out.requires_grad = True
        mask = (ad >= LOG_FLOOR).astype(_compute_dtype)

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g * mask / floored)

        _tape.record(backward)
    return out


def sqrt(a: Tensor) -> Tensor:
    out = Tensor(np.sqrt(_d(a)))
    if _tracking(a):
        out.requires_grad = True
        denom = np.maximum(out.data, _compute_dtype.type(LOG_FLOOR))

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g * _compute_dtype.type(0.5) / denom)

        _tape.record(backward)
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(_d(a)))
    if _tracking(a):
        out.requires_grad = True
        od = out.data

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g * (1.0 - od * od))

        _tape.record(backward)
    return out


def sigmoid(a: Tensor) -> Tensor:
    ad = _d(a)
    # stable: exp of a non-positive argument on both branches
    pos = ad >= 0
    z = np.where(pos, -ad, ad)
    ez = np.exp(z)
    sd = np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(_compute_dtype)
    out = Tensor(sd)
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g * sd * (1.0 - sd))

        _tape.record(backward)
    return out


def relu(a: Tensor) -> Tensor:
    ad = _d(a)
    out = Tensor(np.maximum(ad, 0))
    if _tracking(a):
        out.requires_grad = True
        mask = (ad > 0).astype(_compute_dtype)

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g * mask)

        _tape.record(backward)
    return out


def clip_min(a: Tensor, cmin: float) -> Tensor:
    ad = _d(a)
    cmin = float(cmin)
    out = Tensor(np.maximum(ad, _compute_dtype.type(cmin)))
    if _tracking(a):
        out.requires_grad = True
        mask = (ad >= cmin).astype(_compute_dtype)

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, g * mask)

        _tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# normalization and reductions


def _resolve_axis(a: Tensor, axis: int, op: str) -> int:
    nd = a.data.ndim
    if nd == 0:
        raise ShapeError(f"{op}: scalar input has no axes")
    if axis < 0:
        axis += nd
    if not 0 <= axis < nd:
        raise ShapeError(f"{op}: axis {axis} invalid for shape {a.data.shape}")
    return axis


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`; rows sum to 1 within float32 rounding."""
    axis = _resolve_axis(a, axis, "softmax")
    ad = _d(a)
    shifted = ad - np.max(ad, axis=axis, keepdims=True)
    e = np.exp(shifted.astype(np.float64))
    sd = _cast(e / np.sum(e, axis=axis, keepdims=True))
    out = Tensor(sd)
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            inner = np.sum(sd.astype(np.float64) * g.astype(np.float64), axis=axis, keepdims=True)
            _accum(a, _cast(sd.astype(np.float64) * (g.astype(np.float64) - inner)))

        _tape.record(backward)
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _resolve_axis(a, axis, "log_softmax")
    ad = _d(a)
    shifted = (ad - np.max(ad, axis=axis, keepdims=True)).astype(np.float64)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = Tensor(_cast(shifted - lse))
    if _tracking(a):
        out.requires_grad = True
        soft = _cast(np.exp(shifted - lse))

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            gsum = np.sum(g.astype(np.float64), axis=axis, keepdims=True)
            _accum(a, _cast(g.astype(np.float64) - soft.astype(np.float64) * gsum))

        _tape.record(backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(_cast(np.sum(_d(a), dtype=np.float64)))
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is not None:
                _accum(a, np.full(a.data.shape, g, dtype=_compute_dtype))

        _tape.record(backward)
    return out


def sum_axis(a: Tensor, axis: int) -> Tensor:
    _require_rank(a, 2, "sum_axis")
    axis = _resolve_axis(a, axis, "sum_axis")
    out = Tensor(_cast(np.sum(_d(a), axis=axis, dtype=np.float64)))
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            _accum(a, np.expand_dims(g, axis).repeat(a.data.shape[axis], axis=axis))

        _tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# indexing / assembly


def row(a: Tensor, i: int) -> Tensor:
    _require_rank(a, 2, "row")
    if not 0 <= i < a.shape[0]:
        raise ShapeError(f"row: index {i} out of range for shape {a.shape}")
    out = Tensor(np.array(_d(a)[i]))
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            full = np.zeros(a.data.shape, dtype=_compute_dtype)
            full[i] = g
            _accum(a, full)

        _tape.record(backward)
    return out


def element(v: Tensor, i: int) -> Tensor:
    _require_rank(v, 1, "element")
    if not 0 <= i < v.shape[0]:
        raise ShapeError(f"element: index {i} out of range for shape {v.shape}")
    out = Tensor(np.array(_d(v)[i]))
    if _tracking(v):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            full = np.zeros(v.data.shape, dtype=_compute_dtype)
            full[i] = g
            _accum(v, full)

        _tape.record(backward)
    return out


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    _require_rank(a, 2, "slice_cols")
    if not 0 <= j0 < j1 <= a.shape[1]:
        raise ShapeError(f"slice_cols: range [{j0}, {j1}) invalid for shape {a.shape}")
    out = Tensor(np.ascontiguousarray(_d(a)[:, j0:j1]))
    if _tracking(a):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            full = np.zeros(a.data.shape, dtype=_compute_dtype)
            full[:, j0:j1] = g
            _accum(a, full)

        _tape.record(backward)
    return out


def concat_cols(mats) -> Tensor:
    mats = list(mats)
    if not mats:
        raise ShapeError("concat_cols: empty input")
    for m in mats:
        _require_rank(m, 2, "concat_cols")
        if m.shape[0] != mats[0].shape[0]:
            raise ShapeError(f"concat_cols: row counts differ ({m.shape} vs {mats[0].shape})")
    out = Tensor(np.concatenate([_d(m) for m in mats], axis=1))
    if _tape is not None and any(m.requires_grad for m in mats):
        out.requires_grad = True
        widths = [m.shape[1] for m in mats]

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            j = 0
            for m, w in zip(mats, widths):
                _accum(m, np.ascontiguousarray(g[:, j:j + w]))
                j += w

        _tape.record(backward)
    return out


def stack_rows(vecs) -> Tensor:
    vecs = list(vecs)
    if not vecs:
        raise ShapeError("stack_rows: empty input")
    for v in vecs:
        _require_rank(v, 1, "stack_rows")
        if v.shape != vecs[0].shape:
            raise ShapeError(f"stack_rows: lengths differ ({v.shape} vs {vecs[0].shape})")
    out = Tensor(np.stack([_d(v) for v in vecs], axis=0))
    if _tape is not None and any(v.requires_grad for v in vecs):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            for i, v in enumerate(vecs):
                _accum(v, np.array(g[i]))

        _tape.record(backward)
    return out


def concat_vec(vecs) -> Tensor:
    vecs = list(vecs)
    if not vecs:
        raise ShapeError("concat_vec: empty input")
    for v in vecs:
        _require_rank(v, 1, "concat_vec")
    out = Tensor(np.concatenate([_d(v) for v in vecs]))
    if _tape is not None and any(v.requires_grad for v in vecs):
        out.requires_grad = True
        lengths = [v.shape[0] for v in vecs]

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            j = 0
            for v, n in zip(vecs, lengths):
                _accum(v, np.array(g[j:j + n]))
                j += n

        _tape.record(backward)
    return out


def stack_scalars(scalars) -> Tensor:
    scalars = list(scalars)
    if not scalars:
        raise ShapeError("stack_scalars: empty input")
    for s in scalars:
        if s.data.ndim != 0:
            raise ShapeError(f"stack_scalars: expected scalars, got shape {s.data.shape}")
    out = Tensor(np.array([_d(s) for s in scalars]))
    if _tape is not None and any(s.requires_grad for s in scalars):
        out.requires_grad = True

        def backward():
            g = _out_grad(out)
            if g is None:
                return
            for i, s in enumerate(scalars):
                _accum(s, np.array(g[i]))

        _tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, params, eps: float = 1e-3, detail: dict | None = None) -> float:
    """Central-difference check of analytic gradients for a scalar-valued graph.

    `f` must rebuild the graph from the live parameter values on every call.
    Returns the worst relative error over all entries of all `params`, using
    denominator max(|analytic|, |numeric|, 1e-8). Per-parameter worsts are
    written into `detail` when provided.
    """
    if not 1e-4 <= eps <= 1e-2:
        raise ValueError(f"eps must lie in [1e-4, 1e-2], got {eps}")
    params = list(params)
    with precision(np.float64):
        for p in params:
            p.grad = None
        with Tape() as tape:
            out = f()
            if out.data.ndim != 0 or not np.isfinite(out.data):
                raise EvaluationError("graph did not evaluate to a finite scalar")
            tape.backward(out)
        analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros(p.data.shape)) for p in params}

        worst = 0.0
        for p in params:
            flat = p.data.reshape(-1)
            ana = analytic[id(p)].reshape(-1)
            worst_p = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = p.data.dtype.type(float(orig) + eps)
                hi = float(flat[i])
                f_hi = float(f().data)
                flat[i] = p.data.dtype.type(float(orig) - eps)
                lo = float(flat[i])
                f_lo = float(f().data)
                flat[i] = orig
                if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
                    raise EvaluationError("graph became non-finite during perturbation")
                numeric = (f_hi - f_lo) / (hi - lo)
                a = float(ana[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst_p = max(worst_p, rel)
            if detail is not None:
                key = p.name if isinstance(p, Parameter) else f"param{params.index(p)}"
                detail[key] = worst_p
            worst = max(worst, worst_p)
        for p in params:
            p.grad = None
    return worst

"""Sequence encoders: BiLSTM over text features, audio stream summation and projection, pooling.

The text path changes dimension inside the BiLSTM (hidden size d_model/2 per
direction, halves concatenated). The audio path sums its streams elementwise
and maps to d_model with one affine projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emofuse import autodiff as ad
from emofuse.autodiff import Parameter, ShapeError, Tensor, _accum, _cast, _d
from emofuse.init import glorot_uniform, zeros


class EmptySequenceError(ValueError):
    """An encoder received a zero-length sequence."""


GATES = ("i", "f", "g", "o")


@dataclass
class LstmCellParams:
    """One direction's gate weights: input maps w_*, recurrent maps u_*, biases b_*."""

    w: dict
    u: dict
    b: dict

    @classmethod
    def init(cls, d_in: int, d_hidden: int, seed, prefix: str) -> "LstmCellParams":
        w, u, b = {}, {}, {}
        for g in GATES:
            w[g] = Parameter(glorot_uniform((d_in, d_hidden), seed, f"{prefix}.w_{g}"), f"{prefix}.w_{g}")
            u[g] = Parameter(glorot_uniform((d_hidden, d_hidden), seed, f"{prefix}.u_{g}"), f"{prefix}.u_{g}")
            b[g] = Parameter(zeros(d_hidden), f"{prefix}.b_{g}")
        return cls(w=w, u=u, b=b)

    @property
    def d_in(self) -> int:
        return self.w["i"].shape[0]

    @property
    def d_hidden(self) -> int:
        return self.w["i"].shape[1]

    def parameters(self):
        return [self.w[g] for g in GATES] + [self.u[g] for g in GATES] + [self.b[g] for g in GATES]


@dataclass
class BiLstmParams:
    fwd: LstmCellParams
    bwd: LstmCellParams

    @classmethod
    def init(cls, d_in: int, d_model: int, seed, prefix: str) -> "BiLstmParams":
        if d_model % 2 != 0:
            raise ShapeError(f"d_model must be even to split across directions, got {d_model}")
        h = d_model // 2
        return cls(
            fwd=LstmCellParams.init(d_in, h, seed, f"{prefix}.fwd"),
            bwd=LstmCellParams.init(d_in, h, seed, f"{prefix}.bwd"),
        )

    @property
    def d_model(self) -> int:
        return 2 * self.fwd.d_hidden

    def parameters(self):
        return self.fwd.parameters() + self.bwd.parameters()


def _sigmoid(x):
    pos = x >= 0
    z = np.where(pos, -x, x)
    ez = np.exp(z)
    return np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def lstm_scan(pre: dict, cell: LstmCellParams, order) -> Tensor:
    """Recurrent scan over precomputed input projections; one fused tape node.

    `pre` maps each gate to a [n, d_hidden] tensor holding feats @ w_gate (the
    input contribution for every timestep); the scan adds the recurrent term
    and bias, applies the cell equations along `order`, and writes the hidden
    state back at each step's original row. Backward is standard
    backpropagation through time over the cached gate activations.
    """
    n = pre["i"].shape[0]
    h_dim = cell.d_hidden
    order = list(order)
    pre_d = {g: _d(pre[g]) for g in GATES}
    u_d = {g: _d(cell.u[g]) for g in GATES}
    b_d = {g: _d(cell.b[g]) for g in GATES}

    cache = [None] * n
    out = np.zeros((n, h_dim), dtype=pre_d["i"].dtype)
    h_t = np.zeros(h_dim, dtype=pre_d["i"].dtype)
    c_t = np.zeros(h_dim, dtype=pre_d["i"].dtype)
    for t in order:
        h_prev, c_prev = h_t, c_t
        z = {g: pre_d[g][t] + h_prev @ u_d[g] + b_d[g] for g in GATES}
        gi, gf, go = _sigmoid(z["i"]), _sigmoid(z["f"]), _sigmoid(z["o"])
        gg = np.tanh(z["g"])
        c_t = gf * c_prev + gi * gg
        tc = np.tanh(c_t)
        h_t = go * tc
        cache[t] = (h_prev, c_prev, gi, gf, go, gg, c_t, tc)
        out[t] = h_t

    result = Tensor(out)
    if ad._tape is not None:
        result.requires_grad = True

        def backward():
            g_out = result.grad
            if g_out is None:
                return
            d_pre = {g: np.zeros_like(pre_d[g]) for g in GATES}
            d_u = {g: np.zeros_like(u_d[g]) for g in GATES}
            d_b = {g: np.zeros_like(b_d[g]) for g in GATES}
            dh_rec = np.zeros(h_dim, dtype=g_out.dtype)
            dc_rec = np.zeros(h_dim, dtype=g_out.dtype)
            for t in reversed(order):
                h_prev, c_prev, gi, gf, go, gg, c_t, tc = cache[t]
                dh = g_out[t] + dh_rec
                dc = dc_rec + dh * go * (1.0 - tc * tc)
                dz = {
                    "o": dh * tc * go * (1.0 - go),
                    "i": dc * gg * gi * (1.0 - gi),
                    "f": dc * c_prev * gf * (1.0 - gf),
                    "g": dc * gi * (1.0 - gg * gg),
                }
                dc_rec = dc * gf
                dh_rec = np.zeros(h_dim, dtype=g_out.dtype)
                for g in GATES:
                    d_pre[g][t] = dz[g]
                    d_u[g] += np.outer(h_prev, dz[g])
                    d_b[g] += dz[g]
                    dh_rec += dz[g] @ u_d[g].T
            for g in GATES:
                _accum(pre[g], d_pre[g])
                _accum(cell.u[g], _cast(d_u[g]))
                _accum(cell.b[g], _cast(d_b[g]))

        ad._tape.record(backward)
    return result


def _as_sequence(x, op: str) -> Tensor:
    # raw arrays are wrapped; emptiness must be caught before Tensor's
    # positive-extent invariant rejects the shape with a less specific error
    if isinstance(x, np.ndarray):
        if x.ndim != 2:
            raise ShapeError(f"{op}: expected [n, d] sequence, got {x.shape}")
        if x.shape[0] < 1:
            raise EmptySequenceError(f"{op}: empty sequence")
        return Tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"{op}: expected [n, d] sequence, got {x.shape}")
    return x


def bilstm_encode(feats, params: BiLstmParams) -> Tensor:
    """Run both directions over a [n, d_in] sequence; row i is concat(forward_i, backward_i)."""
    feats = _as_sequence(feats, "bilstm_encode")
    n = feats.shape[0]
    if feats.shape[1] != params.fwd.d_in:
        raise ShapeError(f"bilstm_encode: input width {feats.shape} does not match cell d_in {params.fwd.d_in}")

    def run(cell, order):
        pre = {g: ad.matmul(feats, cell.w[g]) for g in GATES}
        return lstm_scan(pre, cell, order)

    fwd = run(params.fwd, range(n))
    bwd = run(params.bwd, range(n - 1, -1, -1))
    return ad.concat_cols([fwd, bwd])


def combine_audio(stream_a: Tensor, stream_b: Tensor) -> Tensor:
    """Elementwise sum of two pre-aligned audio feature streams."""
    return ad.add(stream_a, stream_b)


@dataclass
class ProjectionParams:
    w: Parameter
    b: Parameter

    @classmethod
    def init(cls, d_in: int, d_model: int, seed, prefix: str) -> "ProjectionParams":
        return cls(
            w=Parameter(glorot_uniform((d_in, d_model), seed, f"{prefix}.w"), f"{prefix}.w"),
            b=Parameter(zeros(d_model), f"{prefix}.b"),
        )

    @property
    def d_in(self) -> int:
        return self.w.shape[0]

    def parameters(self):
        return [self.w, self.b]


def project_audio(seq: Tensor, params: ProjectionParams) -> Tensor:
    """Affine map of each row to d_model."""
    if seq.data.ndim != 2 or seq.shape[1] != params.d_in:
        raise ShapeError(f"project_audio: expected [m, {params.d_in}], got {seq.shape}")
    return ad.add_bias(ad.matmul(seq, params.w), params.b)


def mean_pool(seq) -> Tensor:
    """Column means of a [len, d] sequence."""
    seq = _as_sequence(seq, "mean_pool")
    return ad.scale(ad.sum_axis(seq, 0), 1.0 / seq.shape[0])

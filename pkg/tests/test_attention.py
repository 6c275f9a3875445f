import math

import numpy as np
import pytest

from emofuse import autodiff as ad
from emofuse.attention import MhaParams, cross_modal_pair, mha
from emofuse.autodiff import Parameter, ShapeError, Tensor


def reference_mha(q_in, k_in, v_in, wq, wk, wv, wo, n_heads):
    """Independent float64 reference: explicit loops over heads, queries, keys."""
    q_in, k_in, v_in = (np.asarray(x, dtype=np.float64) for x in (q_in, k_in, v_in))
    wq, wk, wv, wo = (np.asarray(x, dtype=np.float64) for x in (wq, wk, wv, wo))
    d = wq.shape[0]
    hd = d // n_heads
    q, k, v = q_in @ wq, k_in @ wk, v_in @ wv
    nq, nk = q.shape[0], k.shape[0]
    merged = np.zeros((nq, d))
    for h in range(n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(nq):
            scores = []
            for j in range(nk):
                s = 0.0
                for r in range(hd):
                    s += q[i, sl][r] * k[j, sl][r]
                scores.append(s / math.sqrt(hd))
            m = max(scores)
            exps = [math.exp(s - m) for s in scores]
            z = sum(exps)
            attn = [e / z for e in exps]
            for r in range(hd):
                merged[i, h * hd + r] = sum(attn[j] * v[j, sl][r] for j in range(nk))
    return merged @ wo


def identity_params(d, n_heads=1):
    eye = np.eye(d, dtype=np.float32)
    return MhaParams(
        w_q=Parameter(eye, "w_q"),
        w_k=Parameter(eye, "w_k"),
        w_v=Parameter(eye, "w_v"),
        w_o=Parameter(eye, "w_o"),
        n_heads=n_heads,
    )


def test_single_key_returns_value_row():
    rng = np.random.default_rng(0)
    params = identity_params(4)
    queries = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
    kv = Tensor(rng.normal(size=(1, 4)).astype(np.float32))
    out = mha(queries, kv, kv, params)
    for i in range(3):
        assert np.allclose(out.data[i], kv.data[0], atol=1e-6)


def test_identical_keys_give_uniform_weights():
    rng = np.random.default_rng(1)
    params = identity_params(4)
    queries = Tensor(rng.normal(size=(2, 4)).astype(np.float32))
    key_row = rng.normal(size=4).astype(np.float32)
    kv = Tensor(np.tile(key_row, (5, 1)))
    _, weights = mha(queries, kv, kv, params, return_weights=True)
    assert np.allclose(weights, 1.0 / 5.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_matches_loop_reference(seed):
    rng = np.random.default_rng(seed + 10)
    params = MhaParams.init(4, 2, seed=seed, prefix="att")
    q = rng.normal(size=(2, 4)).astype(np.float32)
    kv = rng.normal(size=(3, 4)).astype(np.float32)
    got = mha(Tensor(q), Tensor(kv), Tensor(kv), params).data
    want = reference_mha(q, kv, kv, params.w_q.data, params.w_k.data, params.w_v.data, params.w_o.data, 2)
    assert np.max(np.abs(got - want)) < 1e-5


def test_weights_form_probability_simplex():
    rng = np.random.default_rng(3)
    params = MhaParams.init(8, 4, seed=3, prefix="att")
    q = Tensor(rng.normal(size=(5, 8)).astype(np.float32))
    kv = Tensor(rng.normal(size=(7, 8)).astype(np.float32))
    _, weights = mha(q, kv, kv, params, return_weights=True)
    assert np.all(weights >= 0)
    assert np.allclose(weights.sum(axis=2), 1.0, atol=1e-6)


def test_permutation_invariant_over_keys():
    rng = np.random.default_rng(4)
    params = MhaParams.init(6, 2, seed=4, prefix="att")
    q = Tensor(rng.normal(size=(3, 6)).astype(np.float32))
    kv = rng.normal(size=(5, 6)).astype(np.float32)
    perm = rng.permutation(5)
    out = mha(q, Tensor(kv), Tensor(kv), params).data
    out_perm = mha(q, Tensor(kv[perm]), Tensor(kv[perm]), params).data
    assert np.max(np.abs(out - out_perm)) < 1e-6


def test_single_head_identity_reduces_to_closed_form():
    rng = np.random.default_rng(5)
    d = 4
    params = identity_params(d)
    q = rng.normal(size=(3, d)).astype(np.float32)
    kv = rng.normal(size=(4, d)).astype(np.float32)
    got = mha(Tensor(q), Tensor(kv), Tensor(kv), params).data

    scores = q.astype(np.float64) @ kv.astype(np.float64).T / math.sqrt(d)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    attn = e / e.sum(axis=1, keepdims=True)
    assert np.max(np.abs(got - attn @ kv.astype(np.float64))) < 1e-5


def test_shape_errors():
    params = MhaParams.init(4, 2, seed=0, prefix="att")
    with pytest.raises(ShapeError):
        mha(Tensor(np.zeros((2, 5))), Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))), params)
    with pytest.raises(ShapeError):
        mha(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))), params)
    with pytest.raises(ShapeError):
        MhaParams.init(6, 4, seed=0, prefix="bad")


class TestCrossModalPair:
    def test_single_row_swap(self):
        rng = np.random.default_rng(6)
        p = identity_params(4)
        text = Tensor(rng.normal(size=(1, 4)).astype(np.float32))
        audio = Tensor(rng.normal(size=(1, 4)).astype(np.float32))
        text_enriched, audio_enriched = cross_modal_pair(text, audio, p, p)
        assert np.allclose(text_enriched.data[0], audio.data[0], atol=1e-6)
        assert np.allclose(audio_enriched.data[0], text.data[0], atol=1e-6)

    def test_preserves_query_lengths(self):
        rng = np.random.default_rng(7)
        pt = MhaParams.init(8, 2, seed=7, prefix="t")
        pa = MhaParams.init(8, 2, seed=8, prefix="a")
        text = Tensor(rng.normal(size=(7, 8)).astype(np.float32))
        audio = Tensor(rng.normal(size=(11, 8)).astype(np.float32))
        t1, a1 = cross_modal_pair(text, audio, pt, pa)
        assert t1.shape == (7, 8)
        assert a1.shape == (11, 8)

    def test_grad_check_all_projection_sets(self):
        rng = np.random.default_rng(8)
        pt = MhaParams.init(4, 2, seed=9, prefix="t")
        pa = MhaParams.init(4, 2, seed=10, prefix="a")
        text = Tensor(rng.normal(size=(2, 4)).astype(np.float32))
        audio = Tensor(rng.normal(size=(3, 4)).astype(np.float32))

        def f():
            t1, a1 = cross_modal_pair(text, audio, pt, pa)
            return ad.add(ad.sum_all(t1), ad.sum_all(a1))

        err = ad.grad_check(f, pt.parameters() + pa.parameters())
        assert err < 1e-3

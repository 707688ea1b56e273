"""Finite-difference gradient suite over every autograd op and both models (float64)."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, grad_check, ops
from .autograd.nn import DecoderBlock, EncoderBlock
from .embed import embed_text_hashed
from .models import ClipConcatModel, FrameCrossAttnModel
from .objectives import emd_loss, encode_doa_targets


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _queries(n):
    texts = ["a dog barks", "a telephone rings", "birds chirp", "a man speaks"]
    return np.stack([embed_text_hashed(texts[i % len(texts)]).vector for i in range(n)])


def _op_cases(rng):
    cases = []
    probes = {}

    def readout(name, out):
        # scalar sum(out * R) with a fixed random R, so every output element matters
        if name not in probes:
            probes[name] = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
        return ops.sum(ops.mul(out, probes[name]))

    def case(name, fn, *inputs):
        cases.append((name, lambda *xs: readout(name, fn(*xs)), list(inputs)))

    case("add", ops.add, _t(rng, 3, 4), _t(rng, 3, 4))
    case("add_bias", ops.add, _t(rng, 2, 3, 5), _t(rng, 5))
    case("sub", ops.sub, _t(rng, 4, 2), _t(rng, 4, 2))
    case("neg", ops.neg, _t(rng, 3, 3))
    case("mul", ops.mul, _t(rng, 2, 5), _t(rng, 2, 5))
    case("mul_broadcast", ops.mul_broadcast, _t(rng, 2, 3, 4, 5), _t(rng, 2, 3, 1, 1))
    case("sigmoid", ops.sigmoid, _t(rng, 3, 4, scale=2.0))
    case("matmul_2d", ops.matmul, _t(rng, 2, 3, 4), _t(rng, 4, 5))
    case("matmul_batched", ops.matmul, _t(rng, 2, 3, 4), _t(rng, 2, 4, 2))
    case("linear", ops.linear, _t(rng, 3, 4), _t(rng, 4, 2), _t(rng, 2))
    case("sum_axis", lambda a: ops.sum(a, axis=1), _t(rng, 2, 3, 4))
    case("mean_axes", lambda a: ops.mean(a, axis=(0, 2)), _t(rng, 2, 3, 4))
    case("reshape", lambda a: ops.reshape(a, (4, 6)), _t(rng, 2, 3, 4))
    case("transpose", lambda a: ops.transpose(a, (2, 0, 1)), _t(rng, 2, 3, 4))
    case("swap_last", ops.swap_last, _t(rng, 2, 3, 4))
    case("getitem", lambda a: ops.getitem(a, (slice(None), [0, 2, 2])), _t(rng, 3, 4))
    case("concat", lambda a, b: ops.concat([a, b], axis=1), _t(rng, 2, 3), _t(rng, 2, 4))
    # keep inputs away from the kinks so central differences are valid
    away = Tensor(np.sign(rng.standard_normal((3, 5))) * rng.uniform(0.1, 1.0, (3, 5)),
                  requires_grad=True, dtype=np.float64)
    case("relu", ops.relu, away)
    away2 = Tensor(away.data.copy(), requires_grad=True, dtype=np.float64)
    case("abs", ops.abs, away2)
    case("softmax", lambda a: ops.softmax(a, axis=-1), _t(rng, 3, 6))
    mask = np.triu(np.ones((4, 4), dtype=bool), 1)
    case("softmax_masked", lambda a: ops.softmax(a, axis=-1, mask=mask), _t(rng, 2, 4, 4))
    case("layer_norm", ops.layer_norm, _t(rng, 2, 3, 6), _t(rng, 6), _t(rng, 6))
    case("conv2d", lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding=1),
         _t(rng, 2, 3, 5, 6), _t(rng, 4, 3, 3, 3), _t(rng, 4))
    case("conv2d_strided", lambda x, w, b: ops.conv2d(x, w, b, stride=(1, 2), padding=(0, 1)),
         _t(rng, 1, 2, 4, 7), _t(rng, 3, 2, 3, 3), _t(rng, 3))
    case("conv2d_rect_kernel", lambda x, w: ops.conv2d(x, w, None, padding=(0, 2)),
         _t(rng, 2, 1, 3, 8), _t(rng, 2, 1, 1, 5))
    case("global_mean_pool", ops.global_mean_pool, _t(rng, 2, 3, 4, 5))
    case("attention", ops.scaled_dot_product_attention, _t(rng, 2, 3, 4), _t(rng, 2, 5, 4), _t(rng, 2, 5, 3))
    case("attention_causal", lambda q, k, v: ops.scaled_dot_product_attention(q, k, v, mask),
         _t(rng, 1, 4, 3), _t(rng, 1, 4, 3), _t(rng, 1, 4, 2))
    case("split_merge_heads", lambda a: ops.merge_heads(ops.mul(ops.split_heads(a, 2), ops.split_heads(a, 2))),
         _t(rng, 2, 3, 4))
    wq, wk, wv, wo = [(_t(rng, d, 4), _t(rng, 4)) for d in (4, 6, 6)] + [(_t(rng, 4, 4), _t(rng, 4))]
    params = [w for pair in (wq, wk, wv, wo) for w in pair]
    case("multi_head_cross_attention",
         lambda q, kv, *p: ops.multi_head_cross_attention(q, kv, 2, p[0:2], p[2:4], p[4:6], p[6:8]),
         _t(rng, 2, 3, 4), _t(rng, 2, 2, 6), *params)
    y = encode_doa_targets(rng.uniform(0, 360, 3))
    case("emd_loss", lambda z: emd_loss(z, y), _t(rng, 3, 360))
    return cases


def _block_cases(rng):
    cases = []
    enc = EncoderBlock(8, 2, 16, rng, np.float64)
    x = _t(rng, 2, 3, 8)
    r1 = Tensor(rng.standard_normal((2, 3, 8)))
    cases.append(("encoder_block", lambda *a: ops.sum(ops.mul(enc(x), r1)), enc.parameters() + [x]))
    dec = DecoderBlock(8, 2, 16, rng, 5, np.float64)
    x2, mem = _t(rng, 2, 3, 8), _t(rng, 2, 1, 5)
    r2 = Tensor(rng.standard_normal((2, 3, 8)))
    cases.append(("decoder_block", lambda *a: ops.sum(ops.mul(dec(x2, mem), r2)), dec.parameters() + [x2, mem]))
    return cases


def _model_cases(rng):
    cases = []
    q2 = _queries(2)
    y2 = encode_doa_targets(rng.uniform(0, 360, 2))
    small = ((3, 2), (4, 2))
    for name, kw in [
        ("clip_model", {}),
        ("clip_model_time_pool", {"pool": "time"}),
        ("clip_model_hidden", {"classifier_hidden": 5}),
        ("clip_model_query_filters", {"query_filters": 3, "query_filter_taps": 3}),
    ]:
        m = ClipConcatModel(n_pairs=2, num_lags=6, blocks=small, dtype=np.float64,
                            seed=int(rng.integers(1 << 16)), **kw)
        g = _t(rng, 2, 2, 5, 6)
        cases.append((name, lambda *a, m=m, g=g: emd_loss(m(g, q2), y2), m.parameters() + [g]))
    m = ClipConcatModel(n_pairs=2, num_lags=6, blocks=small, use_audio_semantic=True, dtype=np.float64, seed=3)
    g = _t(rng, 2, 2, 5, 6)
    fa = _queries(3)[1:]
    cases.append(("clip_model_audio_semantic", lambda *a, m=m, g=g: emd_loss(m(g, q2, fa), y2),
                  m.parameters() + [g]))

    yf = encode_doa_targets(rng.uniform(0, 360, (2, 5)))
    for name, kw, mode in [
        ("frame_model_per_frame", {}, "per_frame"),
        ("frame_model_causal", {"causal": True}, "per_frame"),
        ("frame_model_cls", {}, "cls_pooled"),
    ]:
        f = FrameCrossAttnModel(n_pairs=2, num_lags=4, d_model=8, heads=2, n_enc=1, n_dec=1, d_ff=16,
                                dtype=np.float64, seed=int(rng.integers(1 << 16)), **kw)
        g = _t(rng, 2, 2, 5, 4)
        target = yf if mode == "per_frame" else yf[:, :1]
        cases.append((name, lambda *a, f=f, g=g, mode=mode, target=target: emd_loss(f(g, q2, mode), target),
                      f.parameters() + [g]))
    return cases


def suite_cases(seed: int = 0):
    rng = np.random.default_rng(seed)
    return _op_cases(rng) + _block_cases(rng) + _model_cases(rng)


def run_suite(seed: int = 0, tol: float = 1e-4, max_per_input: int = 24):
    """[(name, GradCheckReport)] for every case."""
    results = []
    for name, fn, inputs in suite_cases(seed):
        results.append((name, grad_check(fn, inputs, tol=tol, max_per_input=max_per_input, seed=seed)))
    return results

"""Query-conditioned azimuth models.

``ClipConcatModel`` pools a CNN over the GCC-PHAT map and classifies the
concatenation [spatial; (audio semantic); query]. ``FrameCrossAttnModel``
projects every GCC frame to a token, runs self-attention encoder blocks and
decoder blocks that cross-attend to the query embedding, and classifies
each frame (or a prepended [CLS] token).
"""

from __future__ import annotations

import numpy as np
from scipy.signal import firwin

from .autograd import ops
from .autograd.nn import DecoderBlock, EncoderBlock, LayerNorm, Linear, Module, Parameter, Conv2d
from .autograd.tensor import Tensor, get_default_dtype
from .embed import EMBED_DIM
from .objectives import N_BINS
from .signal import DEFAULT_SAMPLE_RATE

DEFAULT_BLOCKS = ((32, 2), (64, 2), (128, 2), (256, 2))
SPATIAL_DIM = 512
POOL_MODES = ("time", "global")
FILTER_INITS = ("random", "bandpass")


class ModelInputError(ValueError):
    pass


def _check_unit(name: str, e: Tensor) -> None:
    norms = np.linalg.norm(np.asarray(e.data, dtype=np.float64), axis=-1)
    if e.shape[-1] != EMBED_DIM or not np.allclose(norms, 1.0, atol=1e-4):
        raise ModelInputError(f"{name} must be unit-norm {EMBED_DIM}-d vectors (shape {e.shape})")


def _as_batch(g) -> Tensor:
    t = g if isinstance(g, Tensor) else Tensor(getattr(g, "values", g))
    if t.ndim == 3:
        t = ops.reshape(t, (1,) + t.shape)
    if t.ndim != 4:
        raise ModelInputError(f"GCC input must be (pairs, frames, lags) or batched, got {t.shape}")
    return t


class SpatialEncoder(Module):
    """Strided 3x3 conv stages with channel layer-norm and ReLU, then a linear map to 512."""

    def __init__(self, n_pairs: int, num_lags: int, blocks=DEFAULT_BLOCKS, output_dim=SPATIAL_DIM,
                 rng=None, dtype=None, pool: str = "global"):
        if pool not in POOL_MODES:
            raise ValueError(f"pool must be one of {POOL_MODES}, got {pool!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_pairs = n_pairs
        self.num_lags = num_lags
        self.pool = pool
        self.blocks = tuple(tuple(b) for b in blocks)
        self.convs, self.norms = [], []
        c_in, width = n_pairs, num_lags
        for c_out, s in self.blocks:
            self.convs.append(Conv2d(c_in, c_out, 3, rng, padding=1, dtype=dtype))
            self.norms.append(LayerNorm(c_out, dtype))
            c_in = c_out
            width = (width - 1) // s + 1
        self.out_width = width
        self.out = Linear(c_in * (width if pool == "time" else 1), output_dim, rng, dtype=dtype)

    def forward(self, g, mode: str = "clip") -> Tensor:
        """(N, L, T, F) -> (N, 512) in clip mode or (N, T, 512) in frame mode.

        Frame mode strides only along the lag axis so the time axis is kept.
        With ``pool="time"`` the lag positions are flattened into the final
        linear map instead of being averaged away, so the peak location that
        encodes the delay survives pooling.
        """
        x = _as_batch(g)
        if x.shape[1] != self.n_pairs or x.shape[3] != self.num_lags:
            raise ModelInputError(
                f"expected (N, {self.n_pairs}, T, {self.num_lags}) GCC input, got {x.shape}"
            )
        for conv, norm, (_, s) in zip(self.convs, self.norms, self.blocks):
            x = conv(x, stride=s if mode == "clip" else (1, s))
            x = ops.transpose(norm(ops.transpose(x, (0, 2, 3, 1))), (0, 3, 1, 2))
            x = ops.relu(x)
        n, c, t, f = x.shape
        if mode == "clip":
            if self.pool == "global":
                return self.out(ops.global_mean_pool(x))
            return self.out(ops.reshape(ops.mean(x, axis=2), (n, c * f)))
        if mode != "frame":
            raise ValueError(f"unknown encoder mode {mode!r}")
        if self.pool == "global":
            return self.out(ops.transpose(ops.mean(x, axis=3), (0, 2, 1)))
        return self.out(ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (n, t, c * f)))


class QueryFilterbank(Module):
    """Query-selected filtering of each GCC pair along the lag axis.

    A bank of ``n_filters`` lag-domain FIR filters is shared by all pairs;
    the query embedding yields softmax weights over the bank, so the map is
    passed through a query-specific filter before the spatial encoder. Lag
    filtering is a band-pass on the underlying cross-spectrum, which is what
    separates the contributions of sources occupying different bands.
    """

    def __init__(self, n_filters: int, taps: int, rng, dtype=None, init: str = "random",
                 sample_rate: int = DEFAULT_SAMPLE_RATE):
        if taps % 2 == 0:
            raise ValueError("query filter taps must be odd to keep the lag axis centered")
        if init not in FILTER_INITS:
            raise ValueError(f"query filter init must be one of {FILTER_INITS}, got {init!r}")
        self.n_filters = n_filters
        self.conv = Conv2d(1, n_filters, (1, taps), rng, padding=(0, taps // 2), dtype=dtype)
        if init == "bandpass":
            # windowed-sinc band-passes on log-spaced bands; one lag is one sample
            edges = np.geomspace(150.0, 0.48 * sample_rate, n_filters + 1)
            bank = [firwin(taps, [lo, hi], pass_zero=False, fs=sample_rate) for lo, hi in zip(edges, edges[1:])]
            self.conv.weight.data[...] = np.asarray(bank)[:, None, None, :]
        self.select = Linear(EMBED_DIM, n_filters, rng, dtype=dtype)

    def forward(self, x: Tensor, f_t: Tensor) -> Tensor:
        n, l, t, f = x.shape
        y = self.conv(ops.reshape(x, (n, 1, l * t, f)))  # (N, K, L*T, F)
        w = ops.reshape(ops.softmax(self.select(f_t), axis=-1), (n, self.n_filters, 1, 1))
        y = ops.sum(ops.mul_broadcast(y, w), axis=1)
        return ops.reshape(y, (n, l, t, f))


class ClipConcatModel(Module):
    kind = "clip_concat"

    def __init__(self, n_pairs: int = 6, num_lags: int = 96, use_audio_semantic: bool = False,
                 blocks=DEFAULT_BLOCKS, classifier_hidden: int = 0, pool: str = "global",
                 query_filters: int = 0, query_filter_taps: int = 31, query_filter_init: str = "random",
                 seed: int = 0, dtype=None):
        rng = np.random.default_rng(seed)
        dtype = dtype or get_default_dtype()
        self.hparams = dict(
            n_pairs=n_pairs, num_lags=num_lags, use_audio_semantic=use_audio_semantic,
            blocks=[list(b) for b in blocks], classifier_hidden=classifier_hidden, pool=pool,
            query_filters=query_filters, query_filter_taps=query_filter_taps,
            query_filter_init=query_filter_init, seed=seed,
        )
        self.use_audio_semantic = use_audio_semantic
        self.filterbank = (QueryFilterbank(query_filters, query_filter_taps, rng, dtype, query_filter_init)
                           if query_filters else None)
        self.encoder = SpatialEncoder(n_pairs, num_lags, blocks, SPATIAL_DIM, rng, dtype, pool)
        d_in = SPATIAL_DIM + EMBED_DIM * (2 if use_audio_semantic else 1)
        if classifier_hidden:
            self.hidden = Linear(d_in, classifier_hidden, rng, dtype=dtype)
            self.classifier = Linear(classifier_hidden, N_BINS, rng, dtype=dtype)
        else:
            self.hidden = None
            self.classifier = Linear(d_in, N_BINS, rng, dtype=dtype)

    def forward(self, g, f_t_sem, f_a_sem=None) -> Tensor:
        """Logits (N, 360); no softmax is applied."""
        f_t = _as_rows(f_t_sem)
        _check_unit("query embedding", f_t)
        x = _as_batch(g)
        if x.shape[0] != f_t.shape[0]:
            raise ModelInputError(f"batch mismatch: GCC {x.shape[0]} vs query {f_t.shape[0]}")
        q = f_t if f_t.requires_grad else ops.constant(f_t.data, self.classifier.weight)
        if self.filterbank is not None:
            if x.shape[1] != self.encoder.n_pairs or x.shape[3] != self.encoder.num_lags:
                raise ModelInputError(
                    f"expected (N, {self.encoder.n_pairs}, T, {self.encoder.num_lags}) GCC input, got {x.shape}"
                )
            x = self.filterbank(x, q)
        feats = [self.encoder(x, "clip")]
        if self.use_audio_semantic:
            if f_a_sem is None:
                raise ModelInputError("model was built with use_audio_semantic but no f_a_sem given")
            f_a = _as_rows(f_a_sem)
            _check_unit("audio embedding", f_a)
            feats.append(f_a if f_a.requires_grad else ops.constant(f_a.data, q))
        elif f_a_sem is not None:
            raise ModelInputError("f_a_sem given to a model built without use_audio_semantic")
        feats.append(q)
        x = ops.concat(feats, axis=-1)
        if self.hidden is not None:
            x = ops.relu(self.hidden(x))
        return self.classifier(x)


def _as_rows(e) -> Tensor:
    t = e if isinstance(e, Tensor) else Tensor(getattr(e, "vector", e))
    return ops.reshape(t, (1, t.shape[0])) if t.ndim == 1 else t


def positional_encoding(n: int, d: int, dtype) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / (10000.0 ** (2 * i / d))
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)[:, : d - d // 2]
    return pe.astype(dtype)


class FrameCrossAttnModel(Module):
    kind = "frame_cross_attn"

    def __init__(self, n_pairs: int = 6, num_lags: int = 96, d_model: int = 256, heads: int = 4,
                 n_enc: int = 4, n_dec: int = 4, d_ff: int = 1024, causal: bool = False,
                 seed: int = 0, dtype=None):
        if d_model % heads:
            raise ValueError(f"d_model={d_model} must be divisible by heads={heads}")
        rng = np.random.default_rng(seed)
        dtype = dtype or get_default_dtype()
        self.hparams = dict(n_pairs=n_pairs, num_lags=num_lags, d_model=d_model, heads=heads,
                            n_enc=n_enc, n_dec=n_dec, d_ff=d_ff, causal=causal, seed=seed)
        self.n_pairs, self.num_lags, self.d_model, self.causal = n_pairs, num_lags, d_model, causal
        self.proj = Linear(n_pairs * num_lags, d_model, rng, dtype=dtype)
        self.cls = Parameter(rng.normal(0.0, 0.02, size=(1, d_model)), dtype=dtype)
        self.encoder = [EncoderBlock(d_model, heads, d_ff, rng, dtype) for _ in range(n_enc)]
        self.decoder = [DecoderBlock(d_model, heads, d_ff, rng, EMBED_DIM, dtype) for _ in range(n_dec)]
        self.norm = LayerNorm(d_model, dtype)
        self.head = Linear(d_model, N_BINS, rng, dtype=dtype)

    def tokens(self, g, mode: str) -> Tensor:
        x = _as_batch(g)
        n, l, t, f = x.shape
        if l != self.n_pairs or f != self.num_lags:
            raise ModelInputError(f"expected (N, {self.n_pairs}, T, {self.num_lags}) GCC input, got {x.shape}")
        if t < 1:
            raise ModelInputError("GCC input has no frames")
        x = self.proj(ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (n, t, l * f)))
        if mode == "cls_pooled":
            ones = Tensor(np.ones((n, 1, 1), dtype=x.dtype))
            x = ops.concat([ops.matmul(ones, self.cls), x], axis=1)
        elif mode != "per_frame":
            raise ValueError(f"unknown mode {mode!r}")
        pe = positional_encoding(x.shape[1], self.d_model, x.dtype)
        return ops.add(x, Tensor(np.broadcast_to(pe, x.shape).copy()))

    def forward(self, g, f_t_sem, mode: str = "per_frame") -> Tensor:
        """Per-frame logits (N, T, 360), or (N, 1, 360) from the [CLS] token."""
        f_t = _as_rows(f_t_sem)
        _check_unit("query embedding", f_t)
        x = self.tokens(g, mode)
        n, t, _ = x.shape
        if f_t.shape[0] != n:
            raise ModelInputError(f"batch mismatch: GCC {n} vs query {f_t.shape[0]}")
        memory = ops.reshape(f_t if f_t.requires_grad else ops.constant(f_t.data, x), (n, 1, EMBED_DIM))
        mask = np.triu(np.ones((t, t), dtype=bool), 1) if self.causal else None
        for block in self.encoder:
            x = block(x, mask)
        for block in self.decoder:
            x = block(x, memory, mask)
        logits = self.head(self.norm(x))
        if mode == "cls_pooled":
            return logits[:, :1, :]
        return logits


MODEL_TYPES = {ClipConcatModel.kind: ClipConcatModel, FrameCrossAttnModel.kind: FrameCrossAttnModel}


def build_model(kind: str, dtype=None, **hparams) -> Module:
    if kind not in MODEL_TYPES:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(MODEL_TYPES)}")
    return MODEL_TYPES[kind](dtype=dtype, **hparams)

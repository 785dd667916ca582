"""Character-level LSTM encoder/decoder with hand-written backpropagation through time.

Conventions
-----------
* Gate blocks are stacked row-wise in the order of :data:`GATES`, so a layer's
  ``W`` is ``(4H, in_dim)``, ``U`` is ``(4H, H)`` and ``b`` is ``(4H,)``.
* Batched sequences are time-major inside this module: ids ``(T, B)``,
  activations ``(T, B, H)``, logits ``(T, B, A)``.
* The encoder does not advance its state on pad positions, so an encoding
  depends only on the ``length`` leading ids of a sequence.
* The decoder starts from the encoder's final ``(h, c)`` of every layer and is
  fed the eos id as its start symbol, then the previous target symbol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, MalformedSequence, NonFiniteGradient
from .records import CharSequence, DEFAULT_VOCAB, Vocabulary

GATES = ("input", "forget", "output", "candidate")


@dataclass
class LstmLayer:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class LstmParams:
    """Weights of one LSTM stack; decoders additionally carry an output projection.

    The same container holds gradients and Adam moments.
    """

    layers: list[LstmLayer]
    proj_W: np.ndarray | None = None
    proj_b: np.ndarray | None = None

    @property
    def hidden_dim(self) -> int:
        return self.layers[0].hidden_dim

    @property
    def alphabet_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def has_projection(self) -> bool:
        return self.proj_W is not None

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].W.dtype

    def gate(self, layer: int, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W_g, U_g, b_g)`` of one gate."""
        k = GATES.index(name)
        H = self.hidden_dim
        lay = self.layers[layer]
        rows = slice(k * H, (k + 1) * H)
        return lay.W[rows], lay.U[rows], lay.b[rows]

    def named_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, lay in enumerate(self.layers):
            out[f"layer{i}.W"] = lay.W
            out[f"layer{i}.U"] = lay.U
            out[f"layer{i}.b"] = lay.b
        if self.proj_W is not None:
            out["proj.W"] = self.proj_W
            out["proj.b"] = self.proj_b
        return out

    def arrays(self) -> list[np.ndarray]:
        return list(self.named_arrays().values())

    @classmethod
    def from_named(cls, named: dict[str, np.ndarray]) -> "LstmParams":
        layers = []
        i = 0
        while f"layer{i}.W" in named:
            layers.append(LstmLayer(named[f"layer{i}.W"], named[f"layer{i}.U"], named[f"layer{i}.b"]))
            i += 1
        if not layers:
            raise DimensionMismatch("no LSTM layers in parameter set")
        return cls(layers, named.get("proj.W"), named.get("proj.b"))

    def map(self, fn) -> "LstmParams":
        return LstmParams.from_named({k: fn(v) for k, v in self.named_arrays().items()})

    def zeros_like(self) -> "LstmParams":
        return self.map(np.zeros_like)

    def copy(self) -> "LstmParams":
        return self.map(np.copy)

    def astype(self, dtype) -> "LstmParams":
        return self.map(lambda a: a.astype(dtype))

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def check_shapes(self) -> None:
        H = self.hidden_dim
        in_dim = self.alphabet_dim
        for i, lay in enumerate(self.layers):
            if lay.W.shape != (4 * H, in_dim) or lay.U.shape != (4 * H, H) or lay.b.shape != (4 * H,):
                raise DimensionMismatch(f"layer {i} shapes {lay.W.shape}, {lay.U.shape}, {lay.b.shape}")
            in_dim = H
        if self.proj_W is not None and (
            self.proj_W.shape != (self.alphabet_dim, H) or self.proj_b.shape != (self.alphabet_dim,)
        ):
            raise DimensionMismatch(f"projection shapes {self.proj_W.shape}, {self.proj_b.shape}")


@dataclass
class LstmState:
    """Recurrent state; ``h`` and ``c`` are ``(layers, H)`` or ``(layers, batch, H)``."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, params: LstmParams, batch: int | None = None) -> "LstmState":
        shape = (params.num_layers, params.hidden_dim) if batch is None else (
            params.num_layers, batch, params.hidden_dim)
        return cls(np.zeros(shape, params.dtype), np.zeros(shape, params.dtype))


# The fixed-length representation handed from the encoder to a decoder.
EncodedVector = LstmState


def init_params(
    hidden_dim: int,
    alphabet_dim: int,
    seed: int,
    num_layers: int = 1,
    projection: bool = False,
    dtype=np.float64,
) -> LstmParams:
    """Uniform ``±1/sqrt(fan_in)`` weights, forget-gate bias 1, other biases 0."""
    if hidden_dim < 1 or alphabet_dim < 1 or num_layers < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    H = hidden_dim

    def uniform(rows: int, cols: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)

    layers = []
    in_dim = alphabet_dim
    for _ in range(num_layers):
        W = uniform(4 * H, in_dim)
        U = uniform(4 * H, H)
        b = np.zeros(4 * H, dtype)
        b[H:2 * H] = 1.0
        layers.append(LstmLayer(W, U, b))
        in_dim = H
    if projection:
        return LstmParams(layers, uniform(alphabet_dim, H), np.zeros(alphabet_dim, dtype))
    return LstmParams(layers)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * np.tanh(0.5 * x) + 0.5


def _gate_activations(z: np.ndarray, H: int) -> np.ndarray:
    """In place: sigmoid on the first 3H columns, tanh on the candidate block."""
    z[..., :3 * H] *= 0.5
    np.tanh(z, out=z)
    z[..., :3 * H] *= 0.5
    z[..., :3 * H] += 0.5
    return z


def lstm_step(params: LstmParams, state: LstmState, x: np.ndarray) -> LstmState:
    """One step of every layer for a one-hot (or dense) input ``x`` of shape ``(A,)`` or ``(B, A)``."""
    if x.shape[-1] != params.alphabet_dim:
        raise DimensionMismatch(f"input width {x.shape[-1]} != alphabet {params.alphabet_dim}")
    if state.h.shape[0] != params.num_layers or state.h.shape[-1] != params.hidden_dim:
        raise DimensionMismatch(f"state shape {state.h.shape} does not fit the parameters")
    H = params.hidden_dim
    hs, cs = [], []
    inp = x
    for l, lay in enumerate(params.layers):
        z = inp @ lay.W.T + state.h[l] @ lay.U.T + lay.b
        a = _gate_activations(z, H)
        i, f, o, g = a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]
        c = f * state.c[l] + i * g
        h = o * np.tanh(c)
        hs.append(h)
        cs.append(c)
        inp = h
    return LstmState(np.stack(hs), np.stack(cs))


# --- batched sequence kernels ---------------------------------------------

@dataclass
class _LayerCache:
    inputs: np.ndarray        # ids (T, B) for the first layer, else dense (T, B, in)
    mask: np.ndarray | None   # (T, B, 1) bool, True where the state advances
    hs: np.ndarray            # (T+1, B, H); hs[0] is the initial state
    cs: np.ndarray            # (T+1, B, H)
    acts: np.ndarray          # (T, B, 4H) gate activations
    tcs: np.ndarray           # (T, B, H) tanh of the updated cell


def _layer_forward(lay: LstmLayer, inputs: np.ndarray, mask, h0: np.ndarray, c0: np.ndarray) -> _LayerCache:
    H = lay.hidden_dim
    if inputs.ndim == 2:
        xz = lay.W.T[inputs] + lay.b
    else:
        xz = inputs @ lay.W.T + lay.b
    T, B = xz.shape[:2]
    dtype = lay.W.dtype
    hs = np.empty((T + 1, B, H), dtype)
    cs = np.empty((T + 1, B, H), dtype)
    tcs = np.empty((T, B, H), dtype)
    hs[0], cs[0] = h0, c0
    UT = lay.U.T
    for t in range(T):
        z = xz[t]
        z += hs[t] @ UT
        a = _gate_activations(z, H)
        cn = a[:, H:2 * H] * cs[t]
        cn += a[:, :H] * a[:, 3 * H:]
        tc = np.tanh(cn, out=tcs[t])
        hn = a[:, 2 * H:3 * H] * tc
        if mask is None:
            cs[t + 1] = cn
            hs[t + 1] = hn
        else:
            np.copyto(cs[t + 1], np.where(mask[t], cn, cs[t]))
            np.copyto(hs[t + 1], np.where(mask[t], hn, hs[t]))
    return _LayerCache(inputs, mask, hs, cs, xz, tcs)


def _layer_backward(lay: LstmLayer, cache: _LayerCache, d_out, dh_last, dc_last):
    """Returns ``(grad_layer, d_inputs | None, dh0, dc0)``.

    ``d_out`` is the loss gradient w.r.t. ``hs[1:]`` (or None for zero),
    ``dh_last``/``dc_last`` w.r.t. the final state.
    """
    H = lay.hidden_dim
    acts, hs, cs, tcs, mask = cache.acts, cache.hs, cache.cs, cache.tcs, cache.mask
    T, B = acts.shape[:2]
    dz_all = np.empty_like(acts)
    dh = dh_last.copy()
    dc = dc_last.copy()
    U = lay.U
    for t in range(T - 1, -1, -1):
        if d_out is not None:
            dh += d_out[t]
        a = acts[t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = tcs[t]
        if mask is None:
            dhn, dcn = dh, dc
            carry_h = carry_c = None
        else:
            m = mask[t]
            dhn = np.where(m, dh, 0.0)
            dcn = np.where(m, dc, 0.0)
            carry_h = dh - dhn
            carry_c = dc - dcn
        dcn = dcn + dhn * o * (1.0 - tc * tc)
        dz = dz_all[t]
        np.multiply(dcn * g, i * (1.0 - i), out=dz[:, :H])
        np.multiply(dcn * cs[t], f * (1.0 - f), out=dz[:, H:2 * H])
        np.multiply(dhn * tc, o * (1.0 - o), out=dz[:, 2 * H:3 * H])
        np.multiply(dcn * i, 1.0 - g * g, out=dz[:, 3 * H:])
        dc = dcn * f
        dh = dz @ U
        if carry_h is not None:
            dh += carry_h
            dc += carry_c
    flat_dz = dz_all.reshape(T * B, 4 * H)
    dU = flat_dz.T @ hs[:-1].reshape(T * B, H)
    db = flat_dz.sum(axis=0)
    inputs = cache.inputs
    if inputs.ndim == 2:
        onehot = np.zeros((T * B, lay.input_dim), lay.W.dtype)
        onehot[np.arange(T * B), inputs.reshape(-1)] = 1.0
        dW = flat_dz.T @ onehot
        d_inputs = None
    else:
        dW = flat_dz.T @ inputs.reshape(T * B, -1)
        d_inputs = dz_all @ lay.W
    return LstmLayer(dW, dU, db), d_inputs, dh, dc


def _stack_forward(params: LstmParams, ids: np.ndarray, mask, state0: LstmState):
    caches = []
    x = ids
    for l, lay in enumerate(params.layers):
        cache = _layer_forward(lay, x, mask, state0.h[l], state0.c[l])
        caches.append(cache)
        x = cache.hs[1:]
    final = LstmState(np.stack([c.hs[-1] for c in caches]), np.stack([c.cs[-1] for c in caches]))
    return x, final, caches


def _stack_backward(params: LstmParams, caches, d_top, d_final: LstmState):
    grads = [None] * params.num_layers
    dh0, dc0 = [None] * params.num_layers, [None] * params.num_layers
    d_out = d_top
    for l in range(params.num_layers - 1, -1, -1):
        grads[l], d_out, dh0[l], dc0[l] = _layer_backward(
            params.layers[l], caches[l], d_out, d_final.h[l], d_final.c[l])
    return grads, LstmState(np.stack(dh0), np.stack(dc0))


@dataclass
class EncoderCache:
    caches: list
    lengths: np.ndarray


@dataclass
class DecoderCache:
    caches: list
    top: np.ndarray  # (T, B, H)


def _validate_batch(ids: np.ndarray, lengths: np.ndarray, alphabet_dim: int) -> None:
    if ids.ndim != 2 or lengths.shape != (ids.shape[0],):
        raise DimensionMismatch(f"ids {ids.shape} / lengths {lengths.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= alphabet_dim):
        raise DimensionMismatch("symbol id outside the alphabet")
    if lengths.size and (lengths.min() < 1 or lengths.max() > ids.shape[1]):
        raise MalformedSequence("sequence lengths must lie in [1, width]")


def encode_batch(params: LstmParams, ids: np.ndarray, lengths: np.ndarray) -> tuple[EncodedVector, EncoderCache]:
    """Encode ``ids[B, T]`` (batch-major, trimmed or padded) with per-row ``lengths``."""
    _validate_batch(ids, lengths, params.alphabet_dim)
    T = int(lengths.max())
    ids_tm = np.ascontiguousarray(ids[:, :T].T)
    mask = (np.arange(T)[:, None] < lengths[None, :])[:, :, None]
    _, final, caches = _stack_forward(params, ids_tm, mask, LstmState.zeros(params, len(lengths)))
    return final, EncoderCache(caches, lengths)


def decode_teacher_forced_batch(
    params: LstmParams,
    enc: EncodedVector,
    ids: np.ndarray,
    lengths: np.ndarray,
    start_id: int = DEFAULT_VOCAB.eos_id,
) -> tuple[np.ndarray, DecoderCache]:
    """Logits ``(T, B, A)`` for target ``ids[B, T]``; rows past a length are don't-care."""
    if not params.has_projection:
        raise DimensionMismatch("decoder parameters need an output projection")
    _validate_batch(ids, lengths, params.alphabet_dim)
    if enc.h.shape != (params.num_layers, len(lengths), params.hidden_dim):
        raise DimensionMismatch(f"encoded state {enc.h.shape} does not fit the decoder")
    T = int(lengths.max())
    dec_in = np.empty((T, len(lengths)), dtype=np.int64)
    dec_in[0] = start_id
    dec_in[1:] = ids[:, :T - 1].T
    top, _, caches = _stack_forward(params, dec_in, None, enc)
    logits = top @ params.proj_W.T + params.proj_b
    return logits, DecoderCache(caches, top)


def masked_cross_entropy(logits: np.ndarray, ids, lengths=None) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over non-pad target positions.

    Accepts batched ``logits (T, B, A)`` with ``ids[B, T]`` and ``lengths[B]``,
    or a single ``logits (L, A)`` with a :class:`CharSequence`. Returns the loss
    and its gradient w.r.t. the logits (zero on pad positions).
    """
    if isinstance(ids, CharSequence):
        seq = ids
        if logits.ndim != 2 or logits.shape[0] != seq.length:
            raise DimensionMismatch(f"expected {seq.length} logit rows, got {logits.shape}")
        loss, d = masked_cross_entropy(logits[:, None, :], np.array([seq.ids[:seq.length]]),
                                       np.array([seq.length]))
        return loss, d[:, 0, :]
    T, B, A = logits.shape
    lengths = np.asarray(lengths)
    if ids.shape[0] != B or ids.shape[1] < T or lengths.shape != (B,):
        raise DimensionMismatch(f"logits {logits.shape} vs ids {ids.shape}")
    targets = ids[:, :T].T
    mask = np.arange(T)[:, None] < lengths[None, :]
    count = int(mask.sum())
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=-1, keepdims=True)
    logp = shifted - np.log(denom)
    picked = np.take_along_axis(logp, targets[:, :, None], axis=-1)[:, :, 0]
    loss = -float(picked[mask].sum()) / count
    grad = exp / denom
    np.put_along_axis(grad, targets[:, :, None],
                      np.take_along_axis(grad, targets[:, :, None], axis=-1) - 1.0, axis=-1)
    grad *= (mask / count)[:, :, None].astype(grad.dtype)
    return loss, grad


def backward(
    encoder: LstmParams,
    decoder: LstmParams,
    enc_cache: EncoderCache,
    dec_cache: DecoderCache,
    d_logits: np.ndarray,
) -> tuple[LstmParams, LstmParams]:
    """Exact gradients of the loss w.r.t. encoder and decoder parameters."""
    T, B, A = d_logits.shape
    H = decoder.hidden_dim
    flat = d_logits.reshape(T * B, A)
    d_proj_W = flat.T @ dec_cache.top.reshape(T * B, H)
    d_proj_b = flat.sum(axis=0)
    d_top = d_logits @ decoder.proj_W
    zero = LstmState.zeros(decoder, B)
    dec_layers, d_enc = _stack_backward(decoder, dec_cache.caches, d_top, zero)
    enc_layers, _ = _stack_backward(encoder, enc_cache.caches, None, d_enc)
    return LstmParams(enc_layers), LstmParams(dec_layers, d_proj_W, d_proj_b)


def loss_and_grads(
    encoder: LstmParams,
    decoder: LstmParams,
    src_ids: np.ndarray,
    src_lengths: np.ndarray,
    tgt_ids: np.ndarray,
    tgt_lengths: np.ndarray,
) -> tuple[float, LstmParams, LstmParams]:
    enc, enc_cache = encode_batch(encoder, src_ids, src_lengths)
    logits, dec_cache = decode_teacher_forced_batch(decoder, enc, tgt_ids, tgt_lengths)
    loss, d_logits = masked_cross_entropy(logits, tgt_ids, tgt_lengths)
    enc_g, dec_g = backward(encoder, decoder, enc_cache, dec_cache, d_logits)
    return loss, enc_g, dec_g


# --- single-sequence API --------------------------------------------------

def _single(seq: CharSequence) -> tuple[np.ndarray, np.ndarray]:
    return np.array([seq.ids[:seq.length]], dtype=np.int64), np.array([seq.length])


def _unbatch(state: LstmState) -> LstmState:
    return LstmState(state.h[:, 0, :].copy(), state.c[:, 0, :].copy())


def _batch1(state: LstmState) -> LstmState:
    return LstmState(state.h[:, None, :], state.c[:, None, :])


def encode_sequence(params: LstmParams, seq: CharSequence) -> EncodedVector:
    ids, lengths = _single(seq)
    enc, _ = encode_batch(params, ids, lengths)
    return _unbatch(enc)


def decode_teacher_forced(params: LstmParams, enc: EncodedVector, target: CharSequence) -> np.ndarray:
    """Logits ``(target.length, A)``, one row per non-pad target position."""
    ids, lengths = _single(target)
    logits, _ = decode_teacher_forced_batch(params, _batch1(enc), ids, lengths)
    return logits[:, 0, :]


@dataclass(frozen=True)
class Decoded:
    seq: CharSequence
    truncated: bool


def greedy_decode_batch(
    params: LstmParams,
    enc: EncodedVector,
    max_len: int,
    vocab: Vocabulary = DEFAULT_VOCAB,
) -> list[Decoded]:
    """Argmax decoding for a batch of encodings ``(layers, B, H)``.

    Pad is never emitted; ties go to the lowest id. A row that produces
    ``max_len`` symbols without eos is closed with eos and flagged truncated.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if not params.has_projection:
        raise DimensionMismatch("decoder parameters need an output projection")
    B = enc.h.shape[1]
    H = params.hidden_dim
    h = [enc.h[l].copy() for l in range(params.num_layers)]
    c = [enc.c[l].copy() for l in range(params.num_layers)]
    WT = [lay.W.T for lay in params.layers]
    out = np.full((B, max_len + 1), vocab.pad_id, dtype=np.int64)
    lengths = np.zeros(B, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    truncated = np.zeros(B, dtype=bool)
    prev = np.full(B, vocab.eos_id, dtype=np.int64)
    for step in range(max_len + 1):
        for l, lay in enumerate(params.layers):
            xz = WT[0][prev] if l == 0 else h[l - 1] @ WT[l]
            z = xz + h[l] @ lay.U.T + lay.b
            a = _gate_activations(z, H)
            c[l] = a[:, H:2 * H] * c[l] + a[:, :H] * a[:, 3 * H:]
            h[l] = a[:, 2 * H:3 * H] * np.tanh(c[l])
        logits = h[-1] @ params.proj_W.T + params.proj_b
        logits[:, vocab.pad_id] = -np.inf
        nxt = np.argmax(logits, axis=1)
        live = ~done
        if step == max_len:
            truncated = live & (nxt != vocab.eos_id)
            nxt[:] = vocab.eos_id
        out[live, step] = nxt[live]
        lengths[live] = step + 1
        done |= nxt == vocab.eos_id
        prev = nxt
        if done.all():
            break
    return [
        Decoded(CharSequence(tuple(int(i) for i in out[r]), int(lengths[r])), bool(truncated[r]))
        for r in range(B)
    ]


def greedy_decode(params: LstmParams, enc: EncodedVector, max_len: int,
                  vocab: Vocabulary = DEFAULT_VOCAB) -> Decoded:
    return greedy_decode_batch(params, _batch1(enc), max_len, vocab)[0]


# --- optimizer ------------------------------------------------------------

@dataclass
class AdamState:
    m: LstmParams
    v: LstmParams
    t: int = 0
    lr: float = 0.0004
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: LstmParams, lr: float = 0.0004, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, eps)


def adam_update(params: LstmParams, grads: LstmParams, opt: AdamState) -> tuple[LstmParams, AdamState]:
    """Bias-corrected Adam step, applied in place; the step is refused on non-finite gradients."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays):
        raise DimensionMismatch("gradient structure does not match parameters")
    for name, p, g in zip(params.named_arrays(), p_arrays, g_arrays):
        if p.shape != g.shape:
            raise DimensionMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    corr1 = 1.0 - b1 ** opt.t
    corr2 = 1.0 - b2 ** opt.t
    for p, g, m, v in zip(p_arrays, g_arrays, opt.m.arrays(), opt.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= opt.lr * (m / corr1) / (np.sqrt(v / corr2) + opt.eps)
    return params, opt


def global_norm(grads: Sequence[LstmParams]) -> float:
    return float(np.sqrt(sum(float(np.sum(a.astype(np.float64) ** 2)) for g in grads for a in g.arrays())))


def iter_arrays(*params: LstmParams) -> Iterator[np.ndarray]:
    for p in params:
        yield from p.arrays()

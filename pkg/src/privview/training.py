"""Multi-view training: one shared encoder, one decoder per receiver view.

Each step picks the next view round-robin, samples a minibatch of (raw entry,
view text) pairs, and applies Adam to the encoder and that view's decoder only.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import seqnet
from .errors import DigestMismatch, NonFiniteLoss, VersionMismatch
from .policy import VIEWS, AccessMatrix, GeneralizationMap, ReceiverView, apply_view
from .records import (
    DEFAULT_VOCAB,
    MAX_LEN,
    AttributeSchema,
    CharSequence,
    RecordEntry,
    default_schema,
    encode_chars,
    serialize_entry,
    stack_sequences,
)
from .seqnet import AdamState, LstmParams

log = logging.getLogger(__name__)

CKPT_MAGIC = b"privview-ckpt v1\n"


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 256
    lr: float = 0.0004
    batch_size: int = 64
    max_steps: int = 10000
    seed: int = 0
    views: tuple[ReceiverView, ...] = VIEWS
    eval_every: int = 0
    eval_entries: int = 100
    num_layers: int = 1
    clip_norm: float | None = 5.0
    max_len: int = MAX_LEN
    dtype: str = "float32"
    stop_loss: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.views:
            raise ValueError("at least one view is required")
        if self.max_steps < 0 or self.hidden_dim < 1 or self.num_layers < 1:
            raise ValueError("max_steps >= 0, hidden_dim >= 1 and num_layers >= 1 required")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["views"] = [v.value for v in self.views]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        d["views"] = tuple(ReceiverView(v) for v in d["views"])
        return cls(**d)


@dataclass
class ViewDecoderSet:
    encoder: LstmParams
    decoders: dict[ReceiverView, LstmParams]
    encoder_opt: AdamState | None = None
    decoder_opts: dict[ReceiverView, AdamState] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        H = self.encoder.hidden_dim
        for view, dec in self.decoders.items():
            if dec.hidden_dim != H or dec.num_layers != self.encoder.num_layers:
                raise ValueError(f"{view.value} decoder does not match the encoder geometry")

    @property
    def views(self) -> tuple[ReceiverView, ...]:
        return tuple(v for v in VIEWS if v in self.decoders)


TrainingPair = tuple[CharSequence, CharSequence]


def build_training_pairs(
    dataset: Sequence[RecordEntry],
    view: ReceiverView,
    matrix: AccessMatrix,
    gmap: GeneralizationMap,
    schema: AttributeSchema | None = None,
    max_len: int = MAX_LEN,
) -> list[TrainingPair]:
    schema = schema or default_schema()
    return [
        (encode_chars(serialize_entry(e, schema, max_len), max_len=max_len),
         encode_chars(apply_view(e, view, matrix, gmap, schema, max_len), max_len=max_len))
        for e in dataset
    ]


def init_decoder_set(config: TrainConfig) -> ViewDecoderSet:
    """Fresh parameters; each network's seed is derived from ``config.seed`` and its slot."""
    seeds = np.random.SeedSequence(config.seed).generate_state(1 + len(VIEWS))
    dtype = np.dtype(config.dtype)
    A = DEFAULT_VOCAB.size
    encoder = seqnet.init_params(config.hidden_dim, A, int(seeds[0]), config.num_layers, dtype=dtype)
    decoders = {
        v: seqnet.init_params(config.hidden_dim, A, int(seeds[1 + VIEWS.index(v)]), config.num_layers,
                              projection=True, dtype=dtype)
        for v in config.views
    }
    return ViewDecoderSet(
        encoder,
        decoders,
        AdamState.for_params(encoder, config.lr),
        {v: AdamState.for_params(d, config.lr) for v, d in decoders.items()},
        {"config": config.to_dict(), "steps": 0},
    )


def _clip(grads: Sequence[LstmParams], max_norm: float | None) -> float:
    norm = seqnet.global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for a in seqnet.iter_arrays(*grads):
            a *= scale
    return norm


def train(
    dataset_train: Sequence[RecordEntry],
    config: TrainConfig,
    matrix: AccessMatrix,
    gmap: GeneralizationMap,
    schema: AttributeSchema | None = None,
    held_out: Sequence[RecordEntry] | None = None,
    ckpt_path: str | Path | None = None,
    on_record: Callable[[dict[str, Any]], None] | None = None,
    log_every: int = 100,
) -> tuple[ViewDecoderSet, list[dict[str, Any]]]:
    """Train the shared encoder and the configured view decoders.

    Returns the trained set and one record per step (``step``, ``view``,
    ``loss``, ``encoder_grad_norm``); held-out snapshots add
    ``heldout_char_error`` records every ``eval_every`` steps. With
    ``stop_loss`` set, training ends after the first step whose loss is below it.
    """
    if not dataset_train:
        raise ValueError("training set is empty")
    schema = schema or default_schema()
    model = init_decoder_set(config)
    pairs = {v: build_training_pairs(dataset_train, v, matrix, gmap, schema, config.max_len)
             for v in config.views}
    probe = list(held_out[:config.eval_entries]) if held_out else []
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    n = len(dataset_train)
    batch = min(config.batch_size, n)
    history: list[dict[str, Any]] = []

    def emit(record: dict[str, Any]) -> None:
        history.append(record)
        if on_record is not None:
            on_record(record)

    steps_run = 0
    for step in range(config.max_steps):
        view = config.views[step % len(config.views)]
        idx = np.sort(rng.choice(n, size=batch, replace=False))
        src_ids, src_len = stack_sequences([pairs[view][i][0] for i in idx])
        tgt_ids, tgt_len = stack_sequences([pairs[view][i][1] for i in idx])
        decoder = model.decoders[view]
        loss, enc_g, dec_g = seqnet.loss_and_grads(model.encoder, decoder, src_ids, src_len, tgt_ids, tgt_len)
        if not np.isfinite(loss):
            log.error("non-finite loss at step %d, view %s, batch rows %s", step, view.value, idx.tolist())
            raise NonFiniteLoss(f"loss {loss} at step {step} ({view.value}), batch rows {idx.tolist()}")
        enc_norm = seqnet.global_norm([enc_g])
        _clip([enc_g, dec_g], config.clip_norm)
        seqnet.adam_update(model.encoder, enc_g, model.encoder_opt)
        seqnet.adam_update(decoder, dec_g, model.decoder_opts[view])
        emit({"step": step, "view": view.value, "loss": loss, "encoder_grad_norm": enc_norm})
        if log_every and step % log_every == 0:
            log.info("step %d %s loss %.4f", step, view.value, loss)
        if probe and config.eval_every and (step + 1) % config.eval_every == 0:
            from .evaluation import evaluate_view

            for v in config.views:
                res = evaluate_view(model, v, probe, matrix, gmap, schema, config.max_len)
                emit({"step": step, "view": v.value, "heldout_char_error": res.mean_distance})
        steps_run = step + 1
        if config.stop_loss is not None and loss < config.stop_loss:
            log.info("loss %.3g below stop_loss at step %d", loss, step)
            break
    model.metadata = {"config": config.to_dict(), "steps": steps_run}
    if ckpt_path is not None:
        save_checkpoint(model, ckpt_path)
    return model, history


# --- checkpoints ----------------------------------------------------------

def _checkpoint_bytes(model: ViewDecoderSet) -> bytes:
    blocks: list[tuple[str, np.ndarray]] = [
        (f"encoder.{k}", a) for k, a in model.encoder.named_arrays().items()]
    for view in model.views:
        blocks.extend((f"{view.value}.{k}", a) for k, a in model.decoders[view].named_arrays().items())
    header = {
        "hidden_dim": model.encoder.hidden_dim,
        "alphabet_size": model.encoder.alphabet_dim,
        "num_layers": model.encoder.num_layers,
        "views": [v.value for v in model.views],
        "blocks": [{"name": name, "shape": list(a.shape)} for name, a in blocks],
        "metadata": model.metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytearray(CKPT_MAGIC)
    body += struct.pack("<Q", len(header_bytes))
    body += header_bytes
    for _, a in blocks:
        body += np.ascontiguousarray(a, dtype="<f4").tobytes()
    digest = hashlib.sha256(bytes(body)).digest()
    return bytes(body) + digest


def save_checkpoint(model: ViewDecoderSet, path: str | Path) -> None:
    """Atomically write the versioned checkpoint (float32 little-endian blocks + sha256)."""
    path = Path(path)
    data = _checkpoint_bytes(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path, expect_hidden_dim: int | None = None) -> ViewDecoderSet:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise VersionMismatch(f"{path}: not a privview-ckpt v1 file")
    if len(raw) < len(CKPT_MAGIC) + 8 + 32:
        raise DigestMismatch(f"{path}: truncated checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DigestMismatch(f"{path}: content digest mismatch (corrupt or truncated)")
    off = len(CKPT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    header = json.loads(body[off:off + hlen].decode("utf-8"))
    off += hlen
    if expect_hidden_dim is not None and header["hidden_dim"] != expect_hidden_dim:
        raise VersionMismatch(
            f"{path}: checkpoint hidden_dim {header['hidden_dim']} != expected {expect_hidden_dim}")
    if header["alphabet_size"] != DEFAULT_VOCAB.size:
        raise VersionMismatch(f"{path}: alphabet size {header['alphabet_size']} != {DEFAULT_VOCAB.size}")
    named: dict[str, dict[str, np.ndarray]] = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
        off += 4 * count
        owner, _, key = block["name"].partition(".")
        named.setdefault(owner, {})[key] = arr
    if off != len(body):
        raise DigestMismatch(f"{path}: block sizes disagree with file length")
    encoder = LstmParams.from_named(named.pop("encoder"))
    decoders = {ReceiverView(v): LstmParams.from_named(named[v]) for v in header["views"]}
    model = ViewDecoderSet(encoder, decoders, metadata=header["metadata"])
    model.encoder.check_shapes()
    for dec in decoders.values():
        dec.check_shapes()
    return model

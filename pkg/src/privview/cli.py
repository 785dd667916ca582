"""``privview`` command line: simulate, split, apply, train, evaluate, encode, decode.

Every command writes ``<output>.manifest.json`` next to its main output with the
argv, the resolved configuration and sha256 digests of inputs and outputs;
``privview replay <manifest>`` re-runs it and checks the digests.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import MalformedVectorFile, PrivviewError, VersionMismatch
from .evaluation import decode_states, encode_entries, evaluate
from .policy import VIEWS, ReceiverView, apply_view, dump_policy, load_policy
from .records import (
    MAX_LEN,
    decode_chars,
    default_schema,
    read_dataset,
    read_entries,
    write_dataset,
    write_entries,
)
from .seqnet import LstmState
from .simulator import SimulationConfig, simulate_dataset, split_train_test
from .training import TrainConfig, load_checkpoint, train

log = logging.getLogger("privview")

VECTORS_HEADER = "privview-vectors v1"
CONFIG_DIR_ENV = "PRIVVIEW_CONFIG_DIR"


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: str | Path, command: str, argv: Sequence[str], config: dict[str, Any],
                    inputs: Sequence[str | Path], outputs: Sequence[str | Path]) -> None:
    manifest = {
        "tool": "privview",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")


def _policy_path(arg: str | None) -> str | None:
    if arg:
        return arg
    cfg_dir = os.environ.get(CONFIG_DIR_ENV)
    if cfg_dir and (Path(cfg_dir) / "policy.json").exists():
        return str(Path(cfg_dir) / "policy.json")
    return None


def _parse_views(text: str) -> tuple[ReceiverView, ...]:
    if text.strip().lower() == "all":
        return VIEWS
    views = tuple(ReceiverView.parse(t) for t in text.split(",") if t.strip())
    if not views:
        raise argparse.ArgumentTypeError("at least one view is required")
    return tuple(v for v in VIEWS if v in views)


def _view_arg(text: str) -> ReceiverView:
    try:
        return ReceiverView.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _views_arg(text: str) -> tuple[ReceiverView, ...]:
    try:
        return _parse_views(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --- subcommands ----------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    schema = default_schema()
    config = SimulationConfig(n_users=args.users, entries_per_user=args.entries_per_user,
                              seed=args.seed, max_len=args.max_len)
    entries = simulate_dataset(config, schema)
    write_entries(args.out, entries, schema, args.max_len)
    _write_manifest(args.out, "simulate", argv, config.to_dict(), [], [args.out])
    log.info("wrote %d entries to %s", len(entries), args.out)
    return 0


def cmd_split(args, argv) -> int:
    schema = default_schema()
    entries = read_entries(args.input, schema)
    train_set, test_set = split_train_test(entries, args.fraction, args.seed)
    write_entries(args.train_out, train_set, schema)
    write_entries(args.test_out, test_set, schema)
    _write_manifest(args.train_out, "split", argv, {"fraction": args.fraction, "seed": args.seed},
                    [args.input], [args.train_out, args.test_out])
    return 0


def cmd_apply(args, argv) -> int:
    schema = default_schema()
    policy = _policy_path(args.policy)
    matrix, gmap = load_policy(policy)
    matrix.check_total(schema)
    entries = read_entries(args.input, schema)
    rows = [(e.user_id, apply_view(e, args.view, matrix, gmap, schema, args.max_len)) for e in entries]
    write_dataset(args.out, rows, schema, view=args.view.value)
    inputs = [args.input] + ([policy] if policy else [])
    _write_manifest(args.out, "apply", argv,
                    {"view": args.view.value, "policy": json.loads(dump_policy(matrix, gmap))},
                    inputs, [args.out])
    return 0


def cmd_train(args, argv) -> int:
    schema = default_schema()
    policy = _policy_path(args.policy)
    matrix, gmap = load_policy(policy)
    entries = read_entries(args.data, schema)
    held_out = read_entries(args.heldout, schema) if args.heldout else None
    config = TrainConfig(
        hidden_dim=args.hidden, lr=args.lr, batch_size=args.batch_size, max_steps=args.steps,
        seed=args.seed, views=args.views, eval_every=args.eval_every, num_layers=args.layers,
        clip_norm=args.clip if args.clip > 0 else None, max_len=args.max_len,
        stop_loss=args.stop_loss,
    )
    metrics_path = Path(args.metrics or f"{args.ckpt}.metrics.jsonl")
    with metrics_path.open("w", encoding="utf-8", newline="\n") as fh:
        def on_record(record: dict[str, Any]) -> None:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

        train(entries, config, matrix, gmap, schema, held_out, args.ckpt, on_record)
    inputs = [args.data] + ([args.heldout] if args.heldout else []) + ([policy] if policy else [])
    _write_manifest(args.ckpt, "train", argv, config.to_dict(), inputs, [args.ckpt, metrics_path])
    return 0


def cmd_evaluate(args, argv) -> int:
    schema = default_schema()
    policy = _policy_path(args.policy)
    matrix, gmap = load_policy(policy)
    model = load_checkpoint(args.ckpt)
    entries = read_entries(args.data, schema)
    views = args.views if args.views != VIEWS else model.views
    report = evaluate(model, entries, matrix, gmap, schema, args.max_len, views)
    Path(args.report).write_text(report.to_text(), encoding="utf-8", newline="\n")
    records_path = Path(args.records or f"{args.report}.jsonl")
    records_path.write_text(report.to_jsonl(), encoding="utf-8", newline="\n")
    outputs: list[Any] = [args.report, records_path]
    if args.dump:
        with open(args.dump, "w", encoding="utf-8", newline="\n") as fh:
            for v in report.views:
                ev = report.per_view[v]
                for e, p, t, d in zip(entries, ev.predictions, ev.targets, ev.distances):
                    fh.write(json.dumps({"view": v.value, "user_id": e.user_id, "predicted": p,
                                         "target": t, "char_error": d}, sort_keys=True) + "\n")
        outputs.append(args.dump)
    sys.stdout.write(report.to_text())
    inputs = [args.ckpt, args.data] + ([policy] if policy else [])
    _write_manifest(args.report, "evaluate", argv, {"views": [v.value for v in report.views]},
                    inputs, outputs)
    return 0


def write_vectors(path: str | Path, user_ids: Sequence[int], states: Sequence[LstmState]) -> None:
    """One line per entry: ``<user_id>\\t<hex of little-endian float32 h then c>``."""
    rows = []
    for state in states:
        L, B, H = state.h.shape
        for r in range(B):
            vec = np.concatenate([state.h[:, r, :].reshape(-1), state.c[:, r, :].reshape(-1)])
            rows.append(vec.astype("<f4").tobytes().hex())
    if len(rows) != len(user_ids):
        raise ValueError("state count does not match entry count")
    L, _, H = states[0].h.shape if states else (0, 0, 0)
    lines = [VECTORS_HEADER, f"entries {len(rows)} hidden {H} layers {L}"]
    lines.extend(f"{uid}\t{hexvec}" for uid, hexvec in zip(user_ids, rows))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def read_vectors(path: str | Path) -> tuple[list[int], np.ndarray, int, int]:
    """Returns ``(user_ids, h_and_c[N, 2*L*H], hidden, layers)``."""
    lines = Path(path).read_bytes().decode("ascii").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2 or lines[0] != VECTORS_HEADER:
        raise MalformedVectorFile(f"{path}: missing {VECTORS_HEADER!r} header")
    try:
        _, n, _, hidden, _, layers = lines[1].split()
        n, hidden, layers = int(n), int(hidden), int(layers)
    except ValueError:
        raise MalformedVectorFile(f"{path}: bad size line {lines[1]!r}") from None
    body = lines[2:]
    if len(body) != n:
        raise MalformedVectorFile(f"{path}: header says {n} entries, found {len(body)}")
    width = 2 * layers * hidden
    user_ids = []
    out = np.empty((n, width), dtype=np.float32)
    for k, line in enumerate(body):
        uid, sep, hexvec = line.partition("\t")
        try:
            vec = np.frombuffer(bytes.fromhex(hexvec), dtype="<f4")
            user_ids.append(int(uid))
        except ValueError:
            raise MalformedVectorFile(f"{path}:{k + 3}: unreadable vector") from None
        if not sep or vec.size != width:
            raise MalformedVectorFile(f"{path}:{k + 3}: expected {width} floats, found {vec.size}")
        out[k] = vec
    return user_ids, out, hidden, layers


def cmd_encode(args, argv) -> int:
    schema = default_schema()
    model = load_checkpoint(args.ckpt)
    entries = read_entries(args.data, schema)
    states = encode_entries(model, entries, schema, args.max_len)
    write_vectors(args.out, [e.user_id for e in entries], states)
    _write_manifest(args.out, "encode", argv, {"hidden_dim": model.encoder.hidden_dim},
                    [args.ckpt, args.data], [args.out])
    return 0


def cmd_decode(args, argv) -> int:
    from .evaluation import CHUNK

    schema = default_schema()
    model = load_checkpoint(args.ckpt)
    user_ids, vecs, hidden, layers = read_vectors(args.vectors)
    if hidden != model.encoder.hidden_dim or layers != model.encoder.num_layers:
        raise VersionMismatch(
            f"vectors are {layers}x{hidden}, checkpoint is {model.encoder.num_layers}x{model.encoder.hidden_dim}")
    half = layers * hidden
    chunks = []
    for start in range(0, len(vecs), CHUNK):
        block = vecs[start:start + CHUNK]
        h = block[:, :half].reshape(len(block), layers, hidden).transpose(1, 0, 2).copy()
        c = block[:, half:].reshape(len(block), layers, hidden).transpose(1, 0, 2).copy()
        chunks.append(LstmState(h, c))
    decoded = decode_states(model, args.view, chunks, args.max_len)
    rows = [(uid, decode_chars(d.seq)) for uid, d in zip(user_ids, decoded)]
    write_dataset(args.out, rows, schema, view=args.view.value)
    _write_manifest(args.out, "decode", argv, {"view": args.view.value}, [args.ckpt, args.vectors], [args.out])
    return 0


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    for path, digest in manifest["inputs"].items():
        if _sha256(path) != digest:
            raise PrivviewError(f"input {path} changed since the manifest was written")
    status = main(manifest["argv"])
    if status != 0:
        return status
    for path, digest in manifest["outputs"].items():
        if _sha256(path) != digest:
            raise PrivviewError(f"replayed output {path} differs from the manifest digest")
    log.info("replay reproduced %d outputs", len(manifest["outputs"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privview", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset file")
    s.add_argument("--users", type=int, required=True)
    s.add_argument("--entries-per-user", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--max-len", type=int, default=MAX_LEN)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("split", help="user-disjoint train/test split of a dataset file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--train-out", required=True)
    s.add_argument("--test-out", required=True)
    s.add_argument("--fraction", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("apply", help="write the oracle view of every entry")
    s.add_argument("--view", type=_view_arg, required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--policy", help="JSON overrides for the access matrix / generalization map")
    s.add_argument("--max-len", type=int, default=MAX_LEN)
    s.set_defaults(func=cmd_apply)

    s = sub.add_parser("train", help="train the shared encoder and view decoders")
    s.add_argument("--data", required=True)
    s.add_argument("--views", type=_views_arg, default=VIEWS)
    s.add_argument("--hidden", type=int, default=256)
    s.add_argument("--layers", type=int, default=1)
    s.add_argument("--lr", type=float, default=0.0004)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--clip", type=float, default=5.0, help="global gradient-norm clip; 0 disables")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--heldout", help="dataset file for periodic held-out char error")
    s.add_argument("--eval-every", type=int, default=0)
    s.add_argument("--stop-loss", type=float, help="end training once a step's loss falls below this")
    s.add_argument("--metrics", help="JSON-lines metrics path (default <ckpt>.metrics.jsonl)")
    s.add_argument("--policy")
    s.add_argument("--max-len", type=int, default=MAX_LEN)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint against the oracle views")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--views", type=_views_arg, default=VIEWS)
    s.add_argument("--report", required=True)
    s.add_argument("--records", help="JSON-lines report path (default <report>.jsonl)")
    s.add_argument("--dump", help="optional per-entry JSON-lines dump")
    s.add_argument("--policy")
    s.add_argument("--max-len", type=int, default=MAX_LEN)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("encode", help="write the encoded vector of every entry")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-len", type=int, default=MAX_LEN)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="decode encoded vectors with one view's decoder")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--view", type=_view_arg, required=True)
    s.add_argument("--vectors", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-len", type=int, default=MAX_LEN)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("replay", help="re-run a manifest and verify its output digests")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (PrivviewError, OSError, ValueError, KeyError) as exc:
        print(f"privview {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

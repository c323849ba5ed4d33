"""Command-line entry point: ``jobtitles {stats,vocab,train,eval,predict,report}``.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .corpus import BUILTIN, compute_stats, load_catalog, load_corpus, split_corpus
from .embed import PretrainedVectors, build_embedding_matrix, load_vectors
from .errors import ValidationError
from .metrics import evaluate, render_samples
from .model import (
    ModelConfig,
    encode_records,
    fit,
    init_params,
    load_checkpoint,
    predict_labels,
    predict_proba,
    save_checkpoint,
)
from .textpipe import DEFAULT_MIN_FREQ, build_vocab, encode_batch, preprocess

log = logging.getLogger("jobtitles")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

_PATH_KEYS = ("train_path", "test_path", "catalog_path", "vectors_path", "checkpoint_path", "output_dir")
_MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))


@dataclass
class RunConfig:
    train_path: str = ""
    test_path: str | None = None
    catalog_path: str = BUILTIN
    vectors_path: str | None = None
    checkpoint_path: str | None = None
    output_dir: str = "run"
    dev_fraction: float = 0.1
    split_seed: int = 0
    min_freq: int = DEFAULT_MIN_FREQ
    skip_unknown_titles: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    @classmethod
    def from_flat(cls, flat: dict, base: Path | None = None) -> "RunConfig":
        """Build from flat keys; relative paths resolve against ``base``."""
        own = {f.name for f in fields(cls)} - {"model"}
        unknown = set(flat) - own - set(_MODEL_KEYS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in flat.items() if k in own}
        for key in _PATH_KEYS:
            value = kwargs.get(key)
            if value and value != BUILTIN and base is not None:
                kwargs[key] = str((base / value).resolve())
        model = ModelConfig(**{k: v for k, v in flat.items() if k in _MODEL_KEYS})
        return cls(model=model, **kwargs)

    def to_flat(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "model"}
        d.update(self.model.to_json())
        return d

    @property
    def checkpoint(self) -> Path:
        return Path(self.checkpoint_path) if self.checkpoint_path else Path(self.output_dir) / "model.ckpt"

    def validate(self) -> None:
        if not self.train_path:
            raise ValidationError("config needs train_path")
        for key in ("train_path", "test_path", "catalog_path", "vectors_path"):
            value = getattr(self, key)
            if value and value != BUILTIN and not Path(value).is_file():
                raise ValidationError(f"{key}: no such file {value}")
        if not 0.0 < self.dev_fraction < 1.0:
            raise ValidationError(f"dev_fraction must lie in (0, 1), got {self.dev_fraction}")
        if self.min_freq < 1:
            raise ValidationError(f"min_freq must be >= 1, got {self.min_freq}")


def _parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep:
        raise ValidationError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def resolve_config(args) -> RunConfig:
    flat: dict = {}
    base = Path.cwd()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"no such config file: {path}")
        try:
            flat = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(flat, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        base = path.resolve().parent
    overrides = dict(_parse_override(s) for s in args.set or [])
    for key in ("epochs", "seed", "lr", "batch_size", "output_dir", "checkpoint_path", "vectors_path"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for key in _PATH_KEYS:
        if key in overrides and overrides[key] and overrides[key] != BUILTIN:
            overrides[key] = str(Path(overrides[key]).resolve())
    flat.update(overrides)
    cfg = RunConfig.from_flat(flat, base)
    cfg.output_dir = str(Path(cfg.output_dir).resolve())
    return cfg


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2)


# commands ---------------------------------------------------------------------


def cmd_stats(args) -> int:
    catalog = load_catalog(args.catalog)
    records = load_corpus(_existing(args.corpus), catalog, args.skip_unknown)
    print(_dump(compute_stats(records).to_json()))
    return EXIT_OK


def cmd_vocab(args) -> int:
    catalog = load_catalog(args.catalog)
    records = load_corpus(_existing(args.corpus), catalog, args.skip_unknown)
    vocab = build_vocab([preprocess(r.description) for r in records], args.min_freq)
    vocab.save(args.out)
    log.info("wrote %d entries to %s", len(vocab), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    cfg.validate()
    mc = cfg.model
    catalog = load_catalog(cfg.catalog_path)
    if len(catalog) != mc.num_labels:
        raise ValidationError(f"catalog has {len(catalog)} titles but num_labels = {mc.num_labels}")
    train_pool = load_corpus(cfg.train_path, catalog, cfg.skip_unknown_titles)
    test_pool = load_corpus(cfg.test_path, catalog, cfg.skip_unknown_titles) if cfg.test_path else []
    split = split_corpus(train_pool, test_pool, cfg.dev_fraction, cfg.split_seed)
    log.info("split: train=%d dev=%d test=%d", len(split.train), len(split.dev), len(split.test))
    vocab = build_vocab([preprocess(r.description) for r in split.train], cfg.min_freq)
    if cfg.vectors_path:
        pretrained = load_vectors(cfg.vectors_path)
        if pretrained.dim != mc.embedding_dim:
            raise ValidationError(f"vectors have dim {pretrained.dim} but embedding_dim = {mc.embedding_dim}")
    else:
        pretrained = PretrainedVectors(mc.embedding_dim)
    table = build_embedding_matrix(vocab, pretrained, mc.seed, trainable=not mc.freeze_embeddings)
    log.info("vocabulary %d tokens, %d without pretrained vectors", len(vocab), table.oov_count)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_flat()
    (out / "resolved_config.json").write_text(_dump(resolved) + "\n", encoding="utf-8")
    print(_dump(resolved))
    vocab.save(out / "vocab.txt")

    history_path = out / "history.jsonl"
    with history_path.open("w", encoding="utf-8", newline="\n") as hist:

        def on_epoch(rec):
            hist.write(json.dumps(rec.to_json()) + "\n")
            hist.flush()
            dev = "n/a" if rec.dev_f1 is None else f"{100 * rec.dev_f1:.2f}"
            log.info("epoch %d  loss %.6f  dev F1 %s", rec.epoch, rec.train_loss, dev)

        params, _ = fit(
            encode_records(split.train, vocab, mc),
            encode_records(split.dev, vocab, mc),
            init_params(mc, table),
            mc,
            on_epoch,
        )
    cfg.checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, mc, vocab, catalog, cfg.checkpoint)
    log.info("checkpoint written to %s", cfg.checkpoint)
    return EXIT_OK


def _existing(path: str) -> str:
    if path != "-" and not Path(path).is_file():
        raise ValidationError(f"no such file: {path}")
    return path


def _load_for_eval(args):
    runtime_catalog = load_catalog(args.catalog) if args.catalog else None
    ckpt = load_checkpoint(_existing(args.checkpoint), runtime_catalog)
    records = load_corpus(_existing(args.corpus), ckpt.catalog, args.skip_unknown)
    if not records:
        raise ValidationError(f"{args.corpus}: corpus is empty")
    data = encode_records(records, ckpt.vocab, ckpt.config)
    probs = predict_proba(ckpt.params, ckpt.config, data.indices, data.lengths)
    pairs = [(truth, predict_labels(p, ckpt.config.threshold)) for truth, p in zip(data.labels, probs)]
    return ckpt, data, pairs


def cmd_eval(args) -> int:
    ckpt, data, pairs = _load_for_eval(args)
    report = evaluate(data.ids, pairs, ckpt.catalog.titles, args.samples, args.partial)
    if args.table:
        print(report.render_table())
    else:
        print(_dump(report.to_json()))
    log.info("mean F1 (%%): %s", report.mean_f1_percent)
    return EXIT_OK


def cmd_report(args) -> int:
    ckpt, data, pairs = _load_for_eval(args)
    report = evaluate(data.ids, pairs, ckpt.catalog.titles, args.limit)
    if args.table:
        print(render_samples(report.samples))
    else:
        print(_dump([s.to_json() for s in report.samples]))
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(_existing(args.checkpoint))
    src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    dst = sys.stdout if args.output in (None, "-") else open(args.output, "w", encoding="utf-8", newline="\n")
    failed = 0
    try:
        rows: list[tuple[int, object]] = []  # (line number, parsed object or error string)
        for lineno, line in enumerate(src, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict) or "id" not in obj or not isinstance(obj.get("description"), str):
                    raise ValueError("expected an object with 'id' and string 'description'")
                rows.append((lineno, obj))
            except ValueError as exc:
                rows.append((lineno, str(exc)))
        good = [obj for _, obj in rows if isinstance(obj, dict)]
        indices, lengths = encode_batch([o["description"] for o in good], ckpt.vocab, ckpt.config.max_len)
        probs = iter(predict_proba(ckpt.params, ckpt.config, indices, lengths))
        for lineno, obj in rows:
            if not isinstance(obj, dict):
                failed += 1
                log.error("line %d: %s", lineno, obj)
                dst.write(json.dumps({"line": lineno, "error": obj}) + "\n")
                continue
            p = next(probs)
            out = {"id": obj["id"], "labels": ckpt.catalog.names(predict_labels(p, ckpt.config.threshold))}
            if args.probs:
                out["probs"] = [float(x) for x in p]
            dst.write(json.dumps(out, ensure_ascii=False) + "\n")
    finally:
        if src is not sys.stdin:
            src.close()
        if dst is not sys.stdout:
            dst.close()
    return EXIT_VALIDATION if failed else EXIT_OK


# argument parsing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jobtitles", description="Multi-label job title prediction from job descriptions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads (default 1)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def corpus_opts(p):
        p.add_argument("--catalog", default=BUILTIN, help="label catalog file (default: the 68 built-in titles)")
        p.add_argument("--skip-unknown", action="store_true", help="drop unknown titles with a warning")

    p = sub.add_parser("stats", help="corpus statistics as JSON")
    p.add_argument("corpus")
    corpus_opts(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("vocab", help="build a vocabulary file from a corpus")
    p.add_argument("corpus")
    p.add_argument("--min-freq", type=int, default=DEFAULT_MIN_FREQ)
    p.add_argument("--out", required=True)
    corpus_opts(p)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--checkpoint", dest="checkpoint_path")
    p.add_argument("--vectors", dest="vectors_path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (JSON value)")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "mean example F1 and exact-match table"),
                              ("report", cmd_report, "dump mispredicted samples")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("checkpoint")
        p.add_argument("corpus")
        p.add_argument("--catalog", help="require the checkpoint to use this catalog")
        p.add_argument("--skip-unknown", action="store_true")
        p.add_argument("--table", action="store_true", help="human-readable output instead of JSON")
        if name == "eval":
            p.add_argument("--samples", type=int, default=0, help="include this many mispredictions")
            p.add_argument("--partial", action="store_true", help="count any overlap as correct")
        else:
            p.add_argument("--limit", type=int, default=10)
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="label JSONL records of {id, description}")
    p.add_argument("checkpoint")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("--output", "-o")
    p.add_argument("--probs", action="store_true", help="include per-label probabilities")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"jobtitles: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("traceback", exc_info=True)
        print(f"jobtitles: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

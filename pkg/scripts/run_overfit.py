"""Train on the toy fixture and report training-set F1 per epoch.

    python3 scripts/run_overfit.py [--epochs 200] [--config fixtures/toy/config.json]
"""

import argparse
import dataclasses
import json
import time
from pathlib import Path

from jobtitles.cli import RunConfig
from jobtitles.corpus import load_catalog, load_corpus
from jobtitles.embed import build_embedding_matrix, load_vectors
from jobtitles.model import encode_records, fit, init_params
from jobtitles.textpipe import build_vocab, preprocess

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "fixtures" / "toy" / "config.json"))
    ap.add_argument("--epochs", type=int)
    args = ap.parse_args()

    path = Path(args.config)
    cfg = RunConfig.from_flat(json.loads(path.read_text(encoding="utf-8")), path.parent)
    mc = cfg.model if args.epochs is None else dataclasses.replace(cfg.model, epochs=args.epochs)
    records = load_corpus(cfg.train_path, load_catalog(cfg.catalog_path))
    vocab = build_vocab([preprocess(r.description) for r in records], cfg.min_freq)
    table = build_embedding_matrix(vocab, load_vectors(cfg.vectors_path), mc.seed)
    data = encode_records(records, vocab, mc)

    start = time.perf_counter()
    # the training set doubles as the dev set so dev F1 is the training F1
    _, history = fit(data, data, init_params(mc, table), mc,
                     lambda r: print(f"epoch {r.epoch:3d}  loss {r.train_loss:.5f}  train F1 {r.dev_f1:.4f}"))
    best = max(history, key=lambda r: r.dev_f1)
    print(f"best train F1 {best.dev_f1:.4f} at epoch {best.epoch}; {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()

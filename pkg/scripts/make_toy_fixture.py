"""Regenerate the synthetic toy fixture under fixtures/toy/.

Five job titles, each with its own keyword pool; a record's description mixes
keywords of its labels with shared filler words, so labels are learnable from
the text alone. Output is deterministic for a given --seed.
"""

import argparse
import json
from pathlib import Path

import numpy as np

TITLES = [
    ("CNTT - Phần mềm (IT - Software)", ["CNTT - Phần mềm", "IT - Software"]),
    ("Bán hàng / Kinh doanh (Sales / Business Development)", ["Bán hàng / Kinh doanh", "Sales / Business Development"]),
    ("Kế toán / Kiểm toán (Accounting / Auditing / Tax)", ["Kế toán / Kiểm toán", "Accounting / Auditing / Tax"]),
    ("Dịch vụ khách hàng (Customer Service)", ["Dịch vụ khách hàng", "Customer Service"]),
    ("Tiếp thị / Marketing (Marketing)", ["Tiếp thị / Marketing", "Marketing"]),
]

KEYWORDS = [
    ["lập_trình", "phần_mềm", "Python", "Java", "cơ_sở_dữ_liệu", "API", "kiểm_thử"],
    ["doanh_số", "bán_hàng", "khách_hàng_tiềm_năng", "chốt_đơn", "báo_giá", "hợp_đồng", "đại_lý"],
    ["kế_toán", "hóa_đơn", "công_nợ", "báo_cáo_tài_chính", "thuế", "sổ_sách", "kiểm_toán"],
    ["chăm_sóc", "khiếu_nại", "tổng_đài", "hỗ_trợ", "giải_đáp", "điện_thoại", "hài_lòng"],
    ["quảng_cáo", "thương_hiệu", "chiến_dịch", "mạng_xã_hội", "nội_dung", "SEO", "truyền_thông"],
]

FILLER = ["thực_hiện", "công_việc", "theo", "yêu_cầu", "của", "quản_lý", "và", "các", "phối_hợp", "bộ_phận", "khác"]


def make_records(rng, n, prefix):
    records = []
    for k in range(n):
        n_labels = int(rng.choice([1, 1, 2, 2, 3]))
        labels = sorted(rng.choice(len(TITLES), size=n_labels, replace=False).tolist())
        words = []
        for lab in labels:
            words += rng.choice(KEYWORDS[lab], size=3, replace=False).tolist()
        words += rng.choice(FILLER, size=int(rng.integers(2, 5))).tolist()
        rng.shuffle(words)
        text = " ".join(words)
        if rng.random() < 0.3:
            text = text.capitalize() + "."
        records.append({
            "id": f"{prefix}{k:03d}",
            "description": text,
            "labels": [TITLES[i][0] if rng.random() < 0.7 else TITLES[i][1][0] for i in labels],
            "language": "vi",
        })
    return records


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=Path(__file__).resolve().parent.parent / "fixtures" / "toy", type=Path)
    ap.add_argument("--seed", type=int, default=2021)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "catalog.txt", "w", encoding="utf-8", newline="\n") as fh:
        for title, aliases in TITLES:
            fh.write("\t".join([title, *aliases]) + "\n")
    write_jsonl(make_records(rng, 50, "tr"), out / "train.jsonl")
    write_jsonl(make_records(rng, 20, "te"), out / "test.jsonl")

    # 8-dim vectors for most (lowercased) keywords; the rest stay OOV on purpose
    vocab = sorted({w.lower() for pool in KEYWORDS for w in pool} | set(FILLER))
    known = [w for w in vocab if rng.random() < 0.8]
    with open(out / "vectors.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(known)} 8\n")
        for w in known:
            fh.write(w + " " + " ".join(f"{x:.4f}" for x in rng.normal(0, 0.3, 8)) + "\n")

    config = {
        "train_path": "train.jsonl",
        "test_path": "test.jsonl",
        "catalog_path": "catalog.txt",
        "vectors_path": "vectors.txt",
        "output_dir": "run",
        "dev_fraction": 0.1,
        "split_seed": 7,
        "min_freq": 1,
        "max_len": 16,
        "embedding_dim": 8,
        "gru_units": 8,
        "lstm_units": 8,
        "conv_filters": 8,
        "num_labels": 5,
        "batch_size": 16,
        "epochs": 60,
        "lr": 0.01,
        "seed": 0,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()

"""Command-line interface: the full pipeline as reproducible subcommands.

Stages hand off through files (PGM images, feature files, model files,
reports) so desk-scale experiments can resume at any point. Every run
writes a ``manifest.txt`` next to its outputs recording the resolved
configuration; outputs are byte-reproducible from identical flags and
seeds (wall-time lines in manifests and logs aside). ``RCFD_WORKERS``
caps the per-image worker pool.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .codec import compress, double_compress
from .features import image_features, read_features, write_features
from .localize import image_verdict, overlay, predict_map
from .metrics import MetricsReport, confusion, read_summary, write_summary
from .net import load_model, save_model
from .pipeline import (
    TrainConfig,
    build_labeled_set,
    read_config_file,
    train,
    write_train_log,
)
from .pnm import read_image, read_mask, write_mask, write_pgm
from .tamper import make_forged, synth_texture

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

IMAGE_SUFFIXES = (".pgm", ".ppm")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("RCFD_WORKERS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    """Map over per-image work items, honoring RCFD_WORKERS."""
    workers = _workers()
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_manifest(out_dir: Path, subcommand: str, entries: dict) -> None:
    lines = [f"subcommand={subcommand}", f"tool_version={__version__}"]
    lines += [f"{k}={v}" for k, v in entries.items()]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="ascii")


def _list_images(directory: Path) -> list[Path]:
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ValueError(f"{directory}: no PGM/PPM images found")
    return paths


# --- synth -----------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    t0 = time.perf_counter()
    if args.images:
        sources = [(p.stem, read_image(p)) for p in _list_images(Path(args.images))]
    else:
        sources = [
            (f"{i:04d}", synth_texture(args.size, args.size, args.seed + i))
            for i in range(args.synthetic)
        ]
    if args.n > len(sources):
        raise ValueError(f"--n {args.n} exceeds the {len(sources)} available sources")
    n_train = len(sources) - args.n

    for sub in ("sources", "s_sc", "s_dc", "forged", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    def make_train(item):
        name, img = item
        write_pgm(out / "sources" / f"{name}.pgm", img)
        write_pgm(out / "s_sc" / f"{name}.pgm", compress(img, args.q1))
        write_pgm(out / "s_dc" / f"{name}.pgm", double_compress(img, args.q1, args.q2))

    def make_test(indexed):
        idx, (name, img) = indexed
        seed = args.seed + 100_000 + idx
        forged, rect, mask = make_forged(img, args.q1, args.q2, args.fraction, seed)
        write_pgm(out / "sources" / f"{name}.pgm", img)
        write_pgm(out / "forged" / f"{name}.pgm", forged)
        write_mask(out / "masks" / f"{name}.pgm", mask)
        return (
            f"sources/{name}.pgm\t{args.q1}\t{args.q2}\t{args.fraction}"
            f"\t{seed}\t{rect.x0}\t{rect.y0}\t{rect.w}\t{rect.h}"
        )

    _pmap(make_train, sources[:n_train])
    records = _pmap(make_test, list(enumerate(sources[n_train:])))
    if records:
        header = "source\tq1\tq2\tfraction\tseed\tx0\ty0\tw\th"
        (out / "corpus.tsv").write_text("\n".join([header] + records) + "\n", encoding="ascii")

    _write_manifest(
        out,
        "synth",
        {
            "q1": args.q1,
            "q2": args.q2,
            "fraction": args.fraction,
            "seed": args.seed,
            "n_sources": len(sources),
            "n_train": n_train,
            "n_forged": args.n,
            "images": args.images or f"synthetic:{args.synthetic}",
            "out": str(out),
            "wall_seconds": f"{time.perf_counter() - t0:.3f}",
        },
    )
    return EXIT_OK


# --- features ----------------------------------------------------------------

def cmd_features(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    paths = _list_images(Path(args.images))

    def extract(path: Path):
        rows = image_features(read_image(path))
        write_features(out / f"{path.stem}.feat", rows, label=args.label)
        return len(rows)

    counts = _pmap(extract, paths)
    _write_manifest(
        out,
        "features",
        {
            "images": args.images,
            "out": str(out),
            "label": args.label if args.label is not None else "none",
            "n_images": len(paths),
            "n_rows": sum(counts),
            "wall_seconds": f"{time.perf_counter() - t0:.3f}",
        },
    )
    return EXIT_OK


# --- train -------------------------------------------------------------------

def _load_feature_dir(directory: Path, expect_label: int) -> list[np.ndarray]:
    paths = sorted(Path(directory).glob("*.feat"))
    if not paths:
        raise ValueError(f"{directory}: no .feat files found")
    matrices = []
    for path in paths:
        rows, labels = read_features(path)
        if labels is not None and len(labels) and not np.all(labels == expect_label):
            raise ValueError(f"{path}: embedded labels disagree with class {expect_label}")
        matrices.append(rows)
    return matrices


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    values: dict[str, str] = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key in ("q1", "q2", "epochs", "batch", "lr", "dropout", "seed", "val_fraction"):
        flag = getattr(args, key)
        if flag is not None:
            values[key] = str(flag)
    config = TrainConfig(
        q1=int(values.get("q1", 0)),
        q2=int(values.get("q2", 0)),
        epochs=int(values.get("epochs", 20)),
        batch_size=int(values.get("batch", 128)),
        lr=float(values.get("lr", 0.001)),
        dropout=float(values.get("dropout", 0.5)),
        seed=int(values.get("seed", 0)),
        val_fraction=float(values.get("val_fraction", 0.1)),
        patience=int(values.get("patience", 5)),
    )

    f_sc = _load_feature_dir(args.sc, expect_label=0)
    f_dc = _load_feature_dir(args.dc, expect_label=1)
    data = build_labeled_set(f_sc, f_dc, seed=config.seed)
    net, log = train(config, data)

    model_path = Path(args.model)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(net, model_path)
    log_path = Path(args.log) if args.log else model_path.with_suffix(".log")
    write_train_log(log_path, log)
    _write_manifest(
        model_path.parent,
        "train",
        {
            "sc": args.sc,
            "dc": args.dc,
            "model": str(model_path),
            "log": str(log_path),
            "rows": len(data),
            **{k: getattr(config, k) for k in (
                "q1", "q2", "epochs", "batch_size", "lr", "dropout", "seed",
                "val_fraction", "patience",
            )},
            "epochs_run": len(log),
            "final_val_acc": f"{log[-1].val_acc:.6f}" if log else "nan",
            "wall_seconds": f"{time.perf_counter() - t0:.3f}",
        },
    )
    return EXIT_OK


# --- localize ------------------------------------------------------------------

def cmd_localize(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = load_model(args.model)
    image = read_image(args.image)
    unit_map = predict_map(net, image)
    stem = Path(args.image).stem
    write_mask(out / f"{stem}.map.pgm", unit_map.units)
    write_pgm(out / f"{stem}.overlay.pgm", overlay(image, unit_map))
    verdict = image_verdict(unit_map, tau=args.tau)
    _write_manifest(
        out,
        "localize",
        {
            "model": args.model,
            "image": args.image,
            "tau": args.tau,
            "verdict": verdict,
            "forged_units": int(unit_map.units.sum()),
            "total_units": int(unit_map.units.size),
            "map": f"{stem}.map.pgm",
            "overlay": f"{stem}.overlay.pgm",
            "wall_seconds": f"{time.perf_counter() - t0:.3f}",
        },
    )
    print(f"{args.image}: {verdict} ({int(unit_map.units.sum())} forged units)")
    return EXIT_OK


# --- evaluate ----------------------------------------------------------------

def _read_corpus(corpus_dir: Path) -> list[dict]:
    manifest = corpus_dir / "corpus.tsv"
    if not manifest.exists():
        raise ValueError(f"{corpus_dir}: corpus.tsv not found (run synth with --n first)")
    lines = manifest.read_text(encoding="ascii").splitlines()
    header = lines[0].split("\t")
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        records.append(dict(zip(header, line.split("\t"))))
    if not records:
        raise ValueError(f"{manifest}: no forged-image records")
    return records


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    corpus = Path(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = load_model(args.model)
    records = _read_corpus(corpus)

    def score(record):
        name = Path(record["source"]).stem
        forged = read_image(corpus / "forged" / f"{name}.pgm")
        truth = read_mask(corpus / "masks" / f"{name}.pgm")
        pred = predict_map(net, forged)
        return name, confusion(pred.units, truth), record

    scored = _pmap(score, records)
    report = MetricsReport(t_h=args.th)
    by_pair: dict[tuple[str, str], MetricsReport] = {}
    for name, counts, record in scored:
        report.add(name, counts)
        pair = (record["q1"], record["q2"])
        by_pair.setdefault(pair, MetricsReport(t_h=args.th)).add(name, counts)

    report.write_tsv(out / "report.tsv")
    summary = report.summary()
    pairs = sorted(by_pair)
    if len(pairs) == 1:
        summary["q1"] = int(pairs[0][0])
        summary["q2"] = int(pairs[0][1])
    write_summary(out / "summary.txt", summary)
    for (q1, q2), pair_report in by_pair.items():
        if len(pairs) > 1:
            pair_summary = pair_report.summary()
            pair_summary["q1"] = int(q1)
            pair_summary["q2"] = int(q2)
            write_summary(out / f"summary_q{q1}_q{q2}.txt", pair_summary)

    _write_manifest(
        out,
        "evaluate",
        {
            "model": args.model,
            "corpus": str(corpus),
            "t_h": args.th,
            "n_images": len(records),
            "avg_f": f"{report.avg_f:.6f}",
            "success_rate": f"{report.success_rate:.6f}",
            "wall_seconds": f"{time.perf_counter() - t0:.3f}",
        },
    )
    print(
        f"evaluated {len(records)} images: avg F {report.avg_f:.4f}, "
        f"success rate {report.success_rate:.4f} at T_h {args.th:.4f}"
    )
    return EXIT_OK


# --- gridreport ----------------------------------------------------------------

def cmd_gridreport(args) -> int:
    t0 = time.perf_counter()
    rows: dict[int, list[dict[str, float]]] = {}
    for path in args.reports:
        summary = read_summary(path)
        try:
            delta = int(summary["q2"]) - int(summary["q1"])
        except KeyError as exc:
            raise ValueError(f"{path}: summary lacks {exc} (needed for the grid)") from exc
        rows.setdefault(delta, []).append(
            {
                "avg_accuracy": float(summary["avg_accuracy"]),
                "avg_f": float(summary["avg_f"]),
                "success_rate": float(summary["success_rate"]),
            }
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="ascii") as fh:
        fh.write("q2_minus_q1\tn_runs\tavg_accuracy\tavg_f\tsuccess_rate\n")
        for delta in sorted(rows):
            group = rows[delta]
            acc = np.mean([g["avg_accuracy"] for g in group])
            favg = np.mean([g["avg_f"] for g in group])
            srate = np.mean([g["success_rate"] for g in group])
            fh.write(f"{delta}\t{len(group)}\t{acc:.6f}\t{favg:.6f}\t{srate:.6f}\n")
    _write_manifest(
        out.parent,
        "gridreport",
        {
            "reports": ",".join(str(p) for p in args.reports),
            "out": str(out),
            "wall_seconds": f"{time.perf_counter() - t0:.3f}",
        },
    )
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcfd",
        description="Re-compression based JPEG forgery detection and localization.",
    )
    parser.add_argument("--version", action="version", version=f"rcfd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="build compressed corpora and forged test images")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--images", help="directory of source PGM/PPM images")
    group.add_argument("--synthetic", type=int, metavar="N", help="generate N seeded textures")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--q1", type=int, required=True, help="first quality factor")
    p.add_argument("--q2", type=int, required=True, help="second quality factor")
    p.add_argument("--fraction", type=float, default=0.30, help="forged-area fraction")
    p.add_argument("--n", type=int, default=0, help="how many sources become forged test images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128, help="synthetic texture side length")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract feature files from an image directory")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", type=int, choices=(0, 1), default=None,
                   help="class label to embed (0 single, 1 double)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model from feature directories")
    p.add_argument("--sc", required=True, help="directory of single-compressed .feat files")
    p.add_argument("--dc", required=True, help="directory of double-compressed .feat files")
    p.add_argument("--model", required=True, help="output model path")
    p.add_argument("--log", default=None, help="training log path (default: model with .log)")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--q1", type=int, default=None)
    p.add_argument("--q2", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("localize", help="produce a forgery map for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.05, help="forged-fraction verdict threshold")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="score a model against a forged corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="directory produced by synth")
    p.add_argument("--out", required=True)
    p.add_argument("--th", type=float, default=2.0 / 3.0, help="F-measure success threshold")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridreport", help="aggregate summaries into per-(QF2-QF1) rows")
    p.add_argument("--reports", nargs="+", required=True, help="summary key=value files")
    p.add_argument("--out", required=True, help="output TSV path")
    p.set_defaults(func=cmd_gridreport)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # processing failures -> exit 1
        print(f"rcfd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

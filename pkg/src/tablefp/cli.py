"""Command-line interface.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors (schema
violations, malformed rows, unknown cities, conflicting records).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analytics, synth
from .errors import DataError
from .preprocess import binarize, load_page
from .recognizer import (
    ModelConfig,
    TrainingConfig,
    evaluate_accuracy,
    load_weights,
    save_weights,
    train,
)
from .runner import RunConfig, load_corpus_pages, run_extract, write_run
from .similarity import corpus_matrix, kmeans, query_similar
from .store import CorpusStore, ingest_histograms, ingest_metadata, ingest_occurrences
from .histograms import BigramHistogram


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _load_hist_csv(path: str) -> dict[str, BigramHistogram]:
    return {pid: BigramHistogram(vec, method="peaks")
            for pid, vec in ingest_histograms(path).items()}


def _read_labels(path: str) -> dict[str, int]:
    import csv

    with open(path, newline="") as fh:
        return {row["page_id"]: int(row["cluster"]) for row in csv.DictReader(fh)}


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    if args.plan:
        with open(args.plan) as fh:
            plan = json.load(fh)
    elif args.preset == "demo":
        plan = {
            "seed": args.seed,
            "noise": {"speckle": 0.004, "blur": 0.5, "contrast_jitter": 0.06},
            "books": [
                {"book_id": "demo_a", "year": 1548, "city": "Nuremberg", "font": "press",
                 "pages": [{"kind": "random", "rows": 10, "cols": 4},
                           {"kind": "random", "rows": 8, "cols": 5, "header": True},
                           {"kind": "sun_zodiac", "variant": "nostro", "split": 2},
                           {"kind": "climate", "zones": 7}]},
                {"book_id": "demo_b", "year": 1552, "city": "Paris", "font": "galley",
                 "noise": None,
                 "pages": [{"kind": "right_ascension"},
                           {"kind": "random", "rows": 12, "cols": 3}]},
            ],
        }
    elif args.preset == "temporal":
        plan = synth.make_temporal_plan(seed=args.seed)
        plan["write_images"] = False
    elif args.preset == "cities":
        plan = synth.make_city_plan(seed=args.seed)
        plan["write_images"] = False
    elif args.preset == "spread":
        plan = synth.make_spread_plan(seed=args.seed)
        plan["write_images"] = False
    else:
        raise DataError(f"unknown preset {args.preset!r}")
    store, _ = synth.build_synthetic_corpus(plan, out_dir=args.out)
    print(f"wrote {len(store.records)} pages, {len(store.occurrences)} occurrences to {args.out}")
    return 0


def cmd_train(args) -> int:
    store = CorpusStore.load(os.path.join(args.corpus, "metadata.csv"),
                             os.path.join(args.corpus, "annotations.csv"))
    pages = []
    binarized = {}
    for pid, rec in store.records.items():
        path = rec.image_path if os.path.isabs(rec.image_path) \
            else os.path.join(args.corpus, rec.image_path)
        binarized[pid] = binarize(load_page(path)).pixels
        pages.append(synth.RenderedPage(pixels=binarized[pid],
                                        annotations=store.annotations_for(pid),
                                        numbers=[], kind="corpus", font="",
                                        page_id=pid))
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 3]))
    digits = synth.digit_patches(pages, size=args.patch_size,
                                 per_digit=args.per_digit, rng=rng,
                                 binarized=binarized)
    contrast = synth.contrast_patches(pages, n=len(digits), size=args.patch_size,
                                      rng=rng, binarized=binarized)
    cfg = TrainingConfig(epochs=args.epochs, seed=args.seed)
    model_cfg = ModelConfig.desk() if args.preset == "desk" else ModelConfig.default()
    weights, history = train(digits + contrast, cfg, model_cfg)
    save_weights(weights, args.out, training_config=cfg)
    acc = evaluate_accuracy(digits, weights)
    print(f"trained on {len(digits)} digit + {len(contrast)} contrast patches, "
          f"{len(history.train_loss)} epochs")
    print(f"digit accuracy on the sampled patches: {acc:.4f}")
    print(f"weights written to {args.out}")
    return 0


def cmd_extract(args) -> int:
    store = CorpusStore.load(os.path.join(args.corpus, "metadata.csv"))
    pages = load_corpus_pages(store, root=args.corpus)
    cfg = RunConfig(reference=args.reference, method=args.method,
                    workers=args.workers,
                    scales=(0.5, 0.65, 0.8, 0.95, 1.0) if args.search else (1.0,),
                    rotations=(-90, 0, 90) if args.search else (0,))
    weights = load_weights(args.weights)
    result = run_extract(pages, weights, cfg, cache_dir=args.cache)
    write_run(args.out, result, cfg)
    print(f"extracted {len(result.pages) - len(result.failures)}/{len(result.pages)} pages "
          f"-> {args.out} ({len(result.failures)} failures)")
    return 0


def cmd_validate(args) -> int:
    meta = os.path.join(args.corpus, "metadata.csv")
    store = CorpusStore.load(
        meta,
        annotations_path=_opt(os.path.join(args.corpus, "annotations.csv")),
        occurrences_path=_opt(os.path.join(args.corpus, "occurrences.csv")),
        histograms_path=_opt(os.path.join(args.corpus, "histograms.csv")))
    n_ann = sum(len(v) for v in store.annotations.values())
    print(f"{len(store.records)} records, {n_ann} annotations, "
          f"{len(store.occurrences)} occurrences: OK")
    return 0


def _opt(path: str) -> str | None:
    return path if os.path.exists(path) else None


def cmd_cluster(args) -> int:
    hists = _load_hist_csv(args.histograms)
    ids, X = corpus_matrix(hists)
    res = kmeans(X, k=args.k, seed=args.seed)
    with open(args.out, "w") as fh:
        fh.write("page_id,cluster\n")
        for pid, c in zip(ids, res.labels):
            fh.write(f"{pid},{int(c)}\n")
    print(f"k={args.k} inertia={res.inertia:.6g} iters={res.n_iter} -> {args.out}")
    return 0


def cmd_query(args) -> int:
    hists = _load_hist_csv(args.histograms)
    if args.page not in hists:
        raise DataError(f"page {args.page!r} not in {args.histograms}")
    ranked = query_similar(hists[args.page], hists, kind=args.kind, top=args.top + 1)
    shown = 0
    for pid, score in ranked:
        if pid == args.page:
            continue
        print(f"{pid}\t{score:.6g}")
        shown += 1
        if shown >= args.top:
            break
    return 0


def cmd_temporal(args) -> int:
    labels_by_page = _read_labels(args.labels)
    records = {r.page_id: r for r in ingest_metadata(args.metadata)}
    hists = ingest_histograms(args.histograms) if args.histograms else None
    pids = [p for p in labels_by_page if p in records]
    years = np.array([records[p].year for p in pids], dtype=float)
    labels = np.array([labels_by_page[p] for p in pids])
    dens = (np.array([hists[p].sum() for p in pids]) if hists is not None else None)
    curve = analytics.temporal_entropy(years, labels, sigma=args.sigma,
                                       densities=dens, min_density=args.min_density,
                                       base_seed=args.seed)
    with open(args.out + ".csv", "w") as fh:
        fh.write("year,entropy,std,low_support\n")
        for t, m, s, lo in zip(curve.times, curve.mean, curve.std, curve.low_support):
            fh.write(f"{t:.0f},{m:.6f},{s:.6f},{int(lo)}\n")
    from .svgplot import line_chart

    line_chart(args.out + ".svg", curve.times, {"entropy": curve.mean},
               title=f"window entropy, sigma={args.sigma}", ylabel="nats")
    print(f"entropy curve over {len(curve.times)} years -> {args.out}.csv/.svg")
    return 0


def cmd_geo(args) -> int:
    labels_by_page = _read_labels(args.labels)
    records = {r.page_id: r for r in ingest_metadata(args.metadata)}
    pids = [p for p in labels_by_page if p in records]
    cities = [records[p].city for p in pids]
    labels = np.array([labels_by_page[p] for p in pids])
    rows = analytics.geo_relative_entropy(cities, labels)
    with open(args.out, "w") as fh:
        fh.write("city,n_pages,entropy,relative,low_output\n")
        for r in rows:
            fh.write(f"{r.city},{r.n_pages},{r.entropy:.6f},{r.relative:.6f},{int(r.low_output)}\n")
    print(f"{len(rows)} cities -> {args.out}")
    return 0


def cmd_spread(args) -> int:
    occurrences = ingest_occurrences(args.occurrences)
    gaz = analytics.load_gazetteer(args.gazetteer)
    chains = analytics.build_spread_chains(occurrences, gaz, mode=args.mode)
    with open(args.out, "w") as fh:
        fh.write("table_type,src_book,dst_book,src_city,dst_city,src_year,dst_year,km,years\n")
        for e in chains.edges:
            fh.write(f"{e.table_type},{e.src_book},{e.dst_book},{e.src_city},{e.dst_city},"
                     f"{e.src_year},{e.dst_year},{e.distance_km:.1f},{e.dt_years}\n")
    speeds = chains.speed_kmy()
    if speeds:
        print(f"{len(chains.edges)} links, median speed {np.median(speeds):.0f} km/yr -> {args.out}")
    else:
        print(f"{len(chains.edges)} links -> {args.out}")
    return 0


def cmd_embed(args) -> int:
    from .tsne import tsne

    hists = _load_hist_csv(args.histograms)
    ids, X = corpus_matrix(hists)
    perplexity = min(args.perplexity, (len(ids) - 1) / 3.0)
    res = tsne(X, perplexity=perplexity, n_iter=args.iters, seed=args.seed)
    with open(args.out + ".csv", "w") as fh:
        fh.write("page_id,x,y\n")
        for pid, (x, y) in zip(ids, res.embedding):
            fh.write(f"{pid},{x:.6f},{y:.6f}\n")
    groups = None
    if args.metadata:
        records = {r.page_id: r for r in ingest_metadata(args.metadata)}
        groups = [getattr(records[p], args.color_by) if p in records else "?" for p in ids]
    from .svgplot import scatter_chart

    scatter_chart(args.out + ".svg", res.embedding, groups=groups, title="page map")
    print(f"embedded {len(ids)} pages -> {args.out}.csv/.svg")
    return 0


def cmd_explain(args) -> int:
    from .bilrp import bilrp_pair, render_interactions

    weights = load_weights(args.weights)
    pa = binarize(load_page(args.image_a)).pixels
    pb = binarize(load_page(args.image_b)).pixels
    res = bilrp_pair(pa, pb, weights, gamma=args.gamma, grid=args.grid)
    render_interactions(pa, pb, res, args.out)
    print(f"similarity {res.similarity:.6g}, conservation error {res.conservation_error:.2e}")
    print(f"interaction map -> {args.out}")
    return 0


def cmd_report(args) -> int:
    with open(os.path.join(args.run, "manifest.json")) as fh:
        manifest = json.load(fh)
    hists = ingest_histograms(os.path.join(args.run, "histograms.csv"))
    totals = np.array([v.sum() for v in hists.values()])
    lines = [
        f"pages extracted: {manifest['n_pages'] - manifest['n_failures']}/{manifest['n_pages']}",
        f"config digest:   {manifest['config']}",
        f"weights digest:  {manifest['weights']}",
        f"density mean:    {totals.mean():.1f}" if totals.size else "density mean:    n/a",
        f"density median:  {np.median(totals):.1f}" if totals.size else "",
    ]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "report.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(l for l in lines if l) + "\n")
    print("\n".join(l for l in lines if l))
    print(f"report -> {path}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="tablefp",
                description="numerical-table fingerprints for scanned book pages")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--plan", help="JSON plan file")
    s.add_argument("--preset", default="demo",
                   choices=["demo", "temporal", "cities", "spread"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=7)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the digit detector")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--preset", default="desk", choices=["desk", "default"])
    s.add_argument("--epochs", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--patch-size", type=int, default=28)
    s.add_argument("--per-digit", type=int, default=150)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", help="histograms for every corpus page")
    s.add_argument("--corpus", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--method", default="peaks", choices=["peaks", "pooled"])
    s.add_argument("--reference", type=int, default=None)
    s.add_argument("--search", action="store_true",
                   help="search the scale/rotation grid per page")
    s.add_argument("--cache", default=None)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("validate", help="check corpus CSVs and annotations")
    s.add_argument("--corpus", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("cluster", help="k-means over histogram vectors")
    s.add_argument("--histograms", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("query", help="most similar pages to one page")
    s.add_argument("--histograms", required=True)
    s.add_argument("--page", required=True)
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--kind", default="dot", choices=["dot", "cosine"])
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("temporal", help="windowed cluster entropy over years")
    s.add_argument("--metadata", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--histograms", default=None)
    s.add_argument("--sigma", type=float, default=3.0)
    s.add_argument("--min-density", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_temporal)

    s = sub.add_parser("geo", help="per-city relative entropy")
    s.add_argument("--metadata", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_geo)

    s = sub.add_parser("spread", help="reprint chains between cities")
    s.add_argument("--occurrences", required=True)
    s.add_argument("--mode", default="earliest", choices=["earliest", "latest"])
    s.add_argument("--gazetteer", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spread)

    s = sub.add_parser("embed", help="2-D page map")
    s.add_argument("--histograms", required=True)
    s.add_argument("--metadata", default=None)
    s.add_argument("--color-by", default="city", choices=["city", "year", "book_id"])
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iters", type=int, default=600)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("explain", help="pixel interactions behind a similarity")
    s.add_argument("--image-a", required=True)
    s.add_argument("--image-b", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--gamma", type=float, default=0.0)
    s.add_argument("--grid", type=int, default=15)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("report", help="summarize an extraction run")
    s.add_argument("--run", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        sys.stderr.write(f"tablefp: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())

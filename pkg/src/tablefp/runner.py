"""Batch extraction pipeline: pages in, histograms out.

Extraction is pure per page, so runs are cached content-addressed on
(image bytes, weights digest, config digest) and results are reduced
in input order; worker count changes wall time only, never output.
Per-page failures are recorded as data instead of aborting the run.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError
from .histograms import (
    BigramHistogram,
    decode_to_histogram,
    peak_detect,
    pooled_histogram,
    unigram_histogram,
)
from .preprocess import PageImage, binarize, load_page, rescale_to_reference
from .recognizer import ModelWeights, forward, select_scale_rotation
from .recompose import recompose
from .store import CorpusStore, export_histograms


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 3.0
    beta: float = 0.12
    linkage_cut: float = 15.0
    noise_floor: float = 1e-6
    shifts: tuple[int, ...] = (8, 10)
    absence_rel: float = 0.1
    reference: int | None = None
    scales: tuple[float, ...] = (1.0,)
    rotations: tuple[int, ...] = (0,)
    method: str = "peaks"
    workers: int = 1

    def __post_init__(self):
        if self.method not in ("peaks", "pooled", "unigram"):
            raise DataError(f"unknown extraction method {self.method!r}")
        if self.workers < 1:
            raise DataError("workers must be >= 1")


def config_digest(cfg: RunConfig) -> str:
    payload = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
    payload.pop("workers", None)  # parallelism never changes results
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class PageExtract:
    page_id: str
    histogram: BigramHistogram | None = None
    n_marks: int = 0
    scale: float = 1.0
    rotation: int = 0
    error: str | None = None
    cached: bool = False


def extract_page(pixels: np.ndarray | PageImage, weights: ModelWeights,
                 cfg: RunConfig, page_id: str = "") -> PageExtract:
    """Single-page pipeline: scale, binarize, detect, recompose, count."""
    page = pixels if isinstance(pixels, PageImage) else PageImage(
        pixels=np.asarray(pixels, dtype=np.float32), source=page_id)
    if cfg.reference is not None:
        page = rescale_to_reference(page, cfg.reference)
    page = binarize(page)
    if len(cfg.scales) > 1 or len(cfg.rotations) > 1 or cfg.scales[0] != 1.0 \
            or cfg.rotations[0] != 0:
        sel = select_scale_rotation(page, weights, scales=cfg.scales,
                                    rotations=cfg.rotations)
        stack, scale, rotation = sel.stack, sel.scale, sel.rotation
    else:
        stack = forward(page, weights)
        scale, rotation = 1.0, 0
    if cfg.method == "unigram":
        hist = unigram_histogram(stack, beta=cfg.beta, cut=cfg.linkage_cut,
                                 noise_floor=cfg.noise_floor)
        return PageExtract(page_id=page_id, histogram=hist,
                           n_marks=int(hist.total), scale=scale, rotation=rotation)
    features = recompose(stack, shifts=cfg.shifts, absence_rel=cfg.absence_rel)
    if cfg.method == "pooled":
        hist = pooled_histogram(features)
        n_marks = 0
    else:
        marks = peak_detect(features, alpha=cfg.alpha, beta=cfg.beta,
                            cut=cfg.linkage_cut, noise_floor=cfg.noise_floor)
        hist = decode_to_histogram(marks)
        n_marks = len(marks)
    return PageExtract(page_id=page_id, histogram=hist, n_marks=n_marks,
                       scale=scale, rotation=rotation)


@dataclass
class RunResult:
    pages: dict[str, PageExtract] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def histograms(self) -> dict[str, BigramHistogram]:
        return {pid: pe.histogram for pid, pe in self.pages.items()
                if pe.histogram is not None}


def _cache_key(pixels: np.ndarray, weights: ModelWeights, cfg: RunConfig) -> str:
    h = hashlib.sha256()
    arr = np.ascontiguousarray(pixels, dtype=np.float32)
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    h.update(weights.digest().encode())
    h.update(config_digest(cfg).encode())
    return h.hexdigest()


def _cache_load(path: str, page_id: str) -> PageExtract | None:
    try:
        with np.load(path, allow_pickle=False) as z:
            counts = z["counts"]
            meta = json.loads(str(z["meta"]))
        hist = BigramHistogram(counts=counts, transform="none", method=meta["method"])
        return PageExtract(page_id=page_id, histogram=hist, n_marks=int(meta["n_marks"]),
                           scale=float(meta["scale"]), rotation=int(meta["rotation"]),
                           cached=True)
    except (OSError, KeyError, ValueError):
        return None


def run_extract(pages: dict[str, np.ndarray | PageImage],
                weights: ModelWeights, cfg: RunConfig,
                cache_dir: str | None = None) -> RunResult:
    """Extract every page; order of results is the input order.

    Worker threads only parallelize independent pages. Cached entries
    are keyed by content, so reruns after a config or weight change
    never serve stale histograms.
    """
    order = list(pages)
    result = RunResult()

    def one(pid: str) -> PageExtract:
        pix = pages[pid]
        arr = pix.pixels if isinstance(pix, PageImage) else np.asarray(pix)
        key = _cache_key(arr, weights, cfg) if cache_dir else None
        if cache_dir:
            hit = _cache_load(os.path.join(cache_dir, key + ".npz"), pid)
            if hit is not None:
                return hit
        try:
            pe = extract_page(pix, weights, cfg, page_id=pid)
        except Exception as exc:  # per-page failures are data, not aborts
            return PageExtract(page_id=pid, error=f"{type(exc).__name__}: {exc}")
        if cache_dir and pe.histogram is not None:
            os.makedirs(cache_dir, exist_ok=True)
            meta = {"method": pe.histogram.method, "n_marks": pe.n_marks,
                    "scale": pe.scale, "rotation": pe.rotation}
            np.savez_compressed(os.path.join(cache_dir, key + ".npz"),
                                counts=pe.histogram.counts,
                                meta=np.str_(json.dumps(meta, sort_keys=True)))
        return pe

    if cfg.workers == 1:
        extracts = [one(pid) for pid in order]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            extracts = list(pool.map(one, order))
    for pid, pe in zip(order, extracts):
        result.pages[pid] = pe
        if pe.error is not None:
            result.failures.append(pid)
    result.manifest = {
        "config": config_digest(cfg),
        "weights": weights.digest(),
        "n_pages": len(order),
        "n_failures": len(result.failures),
        "failures": result.failures,
    }
    return result


def load_corpus_pages(store: CorpusStore, root: str = "") -> dict[str, PageImage]:
    """Read every record's image from disk, keyed by page id."""
    out: dict[str, PageImage] = {}
    for pid, rec in store.records.items():
        path = rec.image_path
        if root and not os.path.isabs(path):
            path = os.path.join(root, path)
        if not path:
            raise DataError(f"record {pid} has no image path")
        out[pid] = load_page(path)
    return out


def write_run(out_dir: str, result: RunResult, cfg: RunConfig) -> None:
    """Persist histograms, failures, and the manifest of a run."""
    os.makedirs(out_dir, exist_ok=True)
    export_histograms({pid: h.counts for pid, h in result.histograms().items()},
                      os.path.join(out_dir, "histograms.csv"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(result.manifest, fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "failures.csv"), "w") as fh:
        fh.write("page_id,error\n")
        for pid in result.failures:
            err = result.pages[pid].error or ""
            fh.write(f"{pid},{err.replace(',', ';')}\n")

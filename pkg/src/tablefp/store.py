"""Corpus persistence: page metadata, digit annotations, occurrences,
and histogram tables, all as flat UTF-8 CSV.

Ingest is strict: missing columns raise SchemaError, unparseable rows
are collected and reported together with their line numbers, duplicate
page ids conflict. Unknown extra columns ride along untouched.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AnnotationError, ConflictError, MalformedRowsError, SchemaError
from .histograms import HISTOGRAM_COLUMNS, BigramHistogram

META_COLUMNS = ("page_id", "book_id", "year", "city", "image_path")
ANNOTATION_COLUMNS = ("page_id", "x", "y", "w", "h", "digit", "start", "end")
OCCURRENCE_COLUMNS = ("table_type", "book_id", "year", "city", "page_ids")

YEAR_RANGE = (1400, 1700)


@dataclass
class CorpusRecord:
    page_id: str
    book_id: str
    year: int
    city: str
    image_path: str = ""
    density: int | None = None
    histogram: np.ndarray | None = None
    extra: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.page_id:
            raise SchemaError("page_id must be non-empty")
        if self.density is not None and self.density < 0:
            raise ConflictError(f"{self.page_id}: negative density {self.density}")
        if self.histogram is not None:
            self.histogram = np.asarray(self.histogram, dtype=np.float64)
            if self.density is not None:
                total = float(self.histogram.sum())
                if abs(total - self.density) > 1e-6:
                    raise ConflictError(
                        f"{self.page_id}: density {self.density} != histogram total {total}"
                    )


@dataclass
class DigitAnnotation:
    """One digit bbox with number start/end flags, reading order."""

    page_id: str
    x: int
    y: int
    w: int
    h: int
    digit: int
    start: bool
    end: bool

    def __post_init__(self):
        if not (0 <= self.digit <= 9):
            raise AnnotationError(f"{self.page_id}: digit {self.digit} out of range")
        if self.w <= 0 or self.h <= 0:
            raise AnnotationError(f"{self.page_id}: empty bbox {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise AnnotationError(f"{self.page_id}: negative bbox origin")

    @property
    def center(self) -> tuple[float, float]:
        return (self.y + (self.h - 1) / 2.0, self.x + (self.w - 1) / 2.0)


@dataclass
class TableOccurrence:
    table_type: str
    book_id: str
    year: int
    city: str
    page_ids: list[str]

    def __post_init__(self):
        if not self.page_ids:
            raise SchemaError(f"occurrence {self.table_type}/{self.book_id} lists no pages")


def _open_reader(path: Path):
    fh = open(path, "r", encoding="utf-8", newline="")
    reader = csv.DictReader(fh)
    return fh, reader


def _check_columns(reader: csv.DictReader, required, path: Path) -> None:
    have = reader.fieldnames or []
    for col in required:
        if col not in have:
            raise SchemaError(f"{path}: missing required column {col!r}")


def ingest_metadata(path: str | Path, check_years: bool = False) -> list[CorpusRecord]:
    """Read a metadata CSV; extra columns are preserved opaquely.

    check_years enforces the plausible range for historical material;
    synthetic corpora leave it off.
    """
    path = Path(path)
    fh, reader = _open_reader(path)
    with fh:
        _check_columns(reader, META_COLUMNS, path)
        extra_cols = [c for c in (reader.fieldnames or []) if c not in META_COLUMNS]
        records: list[CorpusRecord] = []
        seen: set[str] = set()
        bad: list[tuple[int, str]] = []
        for line_no, row in enumerate(reader, start=2):
            page_id = (row.get("page_id") or "").strip()
            if not page_id:
                bad.append((line_no, "empty page_id"))
                continue
            try:
                year = int(row["year"])
            except (TypeError, ValueError):
                bad.append((line_no, f"bad year {row.get('year')!r}"))
                continue
            if check_years and not (YEAR_RANGE[0] <= year <= YEAR_RANGE[1]):
                bad.append((line_no, f"year {year} outside {YEAR_RANGE}"))
                continue
            if page_id in seen:
                raise ConflictError(f"{path}: duplicate page_id {page_id!r} at line {line_no}")
            seen.add(page_id)
            records.append(
                CorpusRecord(
                    page_id=page_id,
                    book_id=(row.get("book_id") or "").strip(),
                    year=year,
                    city=(row.get("city") or "").strip(),
                    image_path=(row.get("image_path") or "").strip(),
                    extra={c: row.get(c, "") or "" for c in extra_cols},
                )
            )
        if bad:
            raise MalformedRowsError(path, bad)
    return records


def export_metadata(records: list[CorpusRecord], path: str | Path) -> None:
    path = Path(path)
    extra_cols: list[str] = []
    for r in records:
        for c in r.extra:
            if c not in extra_cols:
                extra_cols.append(c)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(META_COLUMNS) + extra_cols)
        for r in records:
            writer.writerow(
                [r.page_id, r.book_id, r.year, r.city, r.image_path] + [r.extra.get(c, "") for c in extra_cols]
            )


def ingest_annotations(
    path: str | Path, page_sizes: dict[str, tuple[int, int]] | None = None
) -> list[DigitAnnotation]:
    """Read annotations; with page_sizes given, bboxes are bounds-checked."""
    path = Path(path)
    fh, reader = _open_reader(path)
    with fh:
        _check_columns(reader, ANNOTATION_COLUMNS, path)
        out: list[DigitAnnotation] = []
        bad: list[tuple[int, str]] = []
        for line_no, row in enumerate(reader, start=2):
            try:
                ann = DigitAnnotation(
                    page_id=(row.get("page_id") or "").strip(),
                    x=int(row["x"]),
                    y=int(row["y"]),
                    w=int(row["w"]),
                    h=int(row["h"]),
                    digit=int(row["digit"]),
                    start=bool(int(row["start"])),
                    end=bool(int(row["end"])),
                )
            except (TypeError, ValueError, KeyError) as exc:
                bad.append((line_no, f"unparseable row: {exc}"))
                continue
            except AnnotationError as exc:
                bad.append((line_no, str(exc)))
                continue
            out.append(ann)
        if bad:
            raise MalformedRowsError(path, bad)
    if page_sizes is not None:
        validate_annotation_bounds(out, page_sizes)
    return out


def validate_annotation_bounds(
    annotations: list[DigitAnnotation], page_sizes: dict[str, tuple[int, int]]
) -> None:
    for ann in annotations:
        if ann.page_id not in page_sizes:
            raise AnnotationError(f"annotation references unknown page {ann.page_id!r}")
        h, w = page_sizes[ann.page_id]
        if ann.x + ann.w > w or ann.y + ann.h > h:
            raise AnnotationError(
                f"{ann.page_id}: bbox ({ann.x},{ann.y},{ann.w},{ann.h}) exceeds page {h}x{w}"
            )


def export_annotations(annotations: list[DigitAnnotation], path: str | Path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS)
        for a in annotations:
            writer.writerow([a.page_id, a.x, a.y, a.w, a.h, a.digit, int(a.start), int(a.end)])


def ingest_occurrences(path: str | Path) -> list[TableOccurrence]:
    path = Path(path)
    fh, reader = _open_reader(path)
    with fh:
        _check_columns(reader, OCCURRENCE_COLUMNS, path)
        out: list[TableOccurrence] = []
        bad: list[tuple[int, str]] = []
        for line_no, row in enumerate(reader, start=2):
            try:
                pages = [p for p in (row.get("page_ids") or "").split(";") if p]
                out.append(
                    TableOccurrence(
                        table_type=(row.get("table_type") or "").strip(),
                        book_id=(row.get("book_id") or "").strip(),
                        year=int(row["year"]),
                        city=(row.get("city") or "").strip(),
                        page_ids=pages,
                    )
                )
            except (TypeError, ValueError, SchemaError) as exc:
                bad.append((line_no, str(exc)))
        if bad:
            raise MalformedRowsError(path, bad)
    return out


def export_occurrences(occurrences: list[TableOccurrence], path: str | Path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OCCURRENCE_COLUMNS)
        for o in occurrences:
            writer.writerow([o.table_type, o.book_id, o.year, o.city, ";".join(o.page_ids)])


def export_histograms(hists: dict[str, np.ndarray], path: str | Path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["page_id"] + HISTOGRAM_COLUMNS)
        for page_id, counts in hists.items():
            c = np.asarray(counts, dtype=np.float64)
            if c.shape != (len(HISTOGRAM_COLUMNS),):
                raise SchemaError(f"{page_id}: histogram has shape {c.shape}")
            cells = [("%d" % v) if float(v).is_integer() else ("%.17g" % v) for v in c]
            writer.writerow([page_id] + cells)


def ingest_histograms(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    fh, reader = _open_reader(path)
    with fh:
        _check_columns(reader, ["page_id"] + HISTOGRAM_COLUMNS, path)
        out: dict[str, np.ndarray] = {}
        bad: list[tuple[int, str]] = []
        for line_no, row in enumerate(reader, start=2):
            page_id = (row.get("page_id") or "").strip()
            try:
                vec = np.array([float(row[c]) for c in HISTOGRAM_COLUMNS])
            except (TypeError, ValueError) as exc:
                bad.append((line_no, f"bad histogram value: {exc}"))
                continue
            if page_id in out:
                raise ConflictError(f"{path}: duplicate page_id {page_id!r} at line {line_no}")
            out[page_id] = vec
        if bad:
            raise MalformedRowsError(path, bad)
    return out


def reconstruct_numbers(annotations: list[DigitAnnotation]) -> list[str]:
    """Walk start/end flags in reading order and rebuild number strings."""
    numbers: list[str] = []
    buffer: list[int] | None = None
    for ann in annotations:
        if ann.start:
            if buffer is not None:
                raise AnnotationError(f"{ann.page_id}: start flag inside an open number")
            buffer = []
        if buffer is None:
            raise AnnotationError(f"{ann.page_id}: digit outside any number (missing start flag)")
        buffer.append(ann.digit)
        if ann.end:
            numbers.append("".join(str(d) for d in buffer))
            buffer = None
    if buffer is not None:
        raise AnnotationError("annotation stream ends inside an open number")
    return numbers


def ground_truth_histogram(annotations: list[DigitAnnotation]) -> BigramHistogram:
    """Exact fingerprint implied by the annotations.

    Multi-digit numbers contribute one bigram per adjacent digit pair;
    single-digit numbers contribute one isolated-digit count.
    """
    counts = np.zeros(len(HISTOGRAM_COLUMNS))
    for number in reconstruct_numbers(annotations):
        if len(number) == 1:
            counts[100 + int(number)] += 1.0
        else:
            for a, b in zip(number, number[1:]):
                counts[10 * int(a) + int(b)] += 1.0
    return BigramHistogram(counts, method="annotated")


class CorpusStore:
    """In-memory corpus: records by page id plus annotation/occurrence joins."""

    def __init__(self):
        self.records: dict[str, CorpusRecord] = {}
        self.annotations: dict[str, list[DigitAnnotation]] = {}
        self.occurrences: list[TableOccurrence] = []

    def add_record(self, record: CorpusRecord) -> None:
        if record.page_id in self.records:
            raise ConflictError(f"duplicate page_id {record.page_id!r}")
        self.records[record.page_id] = record

    def add_annotation(self, ann: DigitAnnotation) -> None:
        self.annotations.setdefault(ann.page_id, []).append(ann)

    def pages(self) -> list[CorpusRecord]:
        return list(self.records.values())

    def annotations_for(self, page_id: str) -> list[DigitAnnotation]:
        return self.annotations.get(page_id, [])

    def attach_histograms(self, hists: dict[str, np.ndarray], set_density: bool = True) -> None:
        for page_id, vec in hists.items():
            if page_id not in self.records:
                raise ConflictError(f"histogram for unknown page {page_id!r}")
            rec = self.records[page_id]
            rec.histogram = np.asarray(vec, dtype=np.float64)
            if set_density:
                rec.density = int(round(float(rec.histogram.sum())))

    @classmethod
    def load(
        cls,
        meta_path: str | Path,
        annotations_path: str | Path | None = None,
        occurrences_path: str | Path | None = None,
        histograms_path: str | Path | None = None,
    ) -> "CorpusStore":
        store = cls()
        for rec in ingest_metadata(meta_path):
            store.add_record(rec)
        if annotations_path is not None:
            for ann in ingest_annotations(annotations_path):
                store.add_annotation(ann)
        if occurrences_path is not None:
            store.occurrences = ingest_occurrences(occurrences_path)
        if histograms_path is not None:
            store.attach_histograms(ingest_histograms(histograms_path))
        return store

"""Corpus store: CSV schemas, round trips, malformed-row reporting."""
import numpy as np
import pytest

from tablefp.errors import (
    AnnotationError,
    ConflictError,
    MalformedRowsError,
    SchemaError,
)
from tablefp.store import (
    CorpusRecord,
    CorpusStore,
    DigitAnnotation,
    TableOccurrence,
    export_annotations,
    export_histograms,
    export_metadata,
    export_occurrences,
    ground_truth_histogram,
    ingest_annotations,
    ingest_histograms,
    ingest_metadata,
    ingest_occurrences,
    reconstruct_numbers,
    validate_annotation_bounds,
)
from tablefp.histograms import HISTOGRAM_COLUMNS


def ann(page_id, x, digit, start, end, y=10, w=7, h=11):
    return DigitAnnotation(page_id=page_id, x=x, y=y, w=w, h=h,
                           digit=digit, start=start, end=end)


def number_annotations(page_id, digits, x0=20, y=10, advance=9):
    out = []
    for i, ch in enumerate(digits):
        out.append(ann(page_id, x0 + i * advance, int(ch),
                       start=(i == 0), end=(i == len(digits) - 1), y=y))
    return out


# ---------------------------------------------------------------------------
# dataclass validation

def test_record_rejects_density_histogram_mismatch():
    with pytest.raises(ConflictError):
        CorpusRecord(page_id="p", book_id="b", year=1500, city="x",
                     density=5, histogram=np.zeros(110))


def test_record_accepts_consistent_density():
    h = np.zeros(110)
    h[42] = 5
    rec = CorpusRecord(page_id="p", book_id="b", year=1500, city="x",
                       density=5, histogram=h)
    assert rec.histogram.dtype == np.float64


def test_annotation_rejects_bad_digit_and_bbox():
    with pytest.raises(AnnotationError):
        ann("p", 0, digit=10, start=True, end=True)
    with pytest.raises(AnnotationError):
        ann("p", 0, digit=3, start=True, end=True, w=0)
    with pytest.raises(AnnotationError):
        DigitAnnotation(page_id="p", x=-1, y=0, w=5, h=5, digit=1,
                        start=True, end=True)


def test_occurrence_requires_pages():
    with pytest.raises(SchemaError):
        TableOccurrence(table_type="climate_7", book_id="b", year=1500,
                        city="x", page_ids=[])


# ---------------------------------------------------------------------------
# number reconstruction and ground truth

def test_reconstruct_numbers_walks_start_end_flags():
    anns = (number_annotations("p", "142", x0=20)
            + number_annotations("p", "7", x0=80)
            + number_annotations("p", "35", x0=20, y=40))
    assert reconstruct_numbers(anns) == ["142", "7", "35"]


def test_ground_truth_histogram_counts_pairs_and_singletons():
    anns = (number_annotations("p", "142", x0=20)
            + number_annotations("p", "7", x0=80)
            + number_annotations("p", "44", x0=20, y=40))
    h = ground_truth_histogram(anns)
    assert h.method == "annotated"
    assert h.counts[14] == 1  # pair (1,4)
    assert h.counts[42] == 1  # pair (4,2)
    assert h.counts[44] == 1  # pair (4,4)
    assert h.counts[107] == 1  # isolated 7
    assert h.total == 4


# ---------------------------------------------------------------------------
# CSV round trips

def test_metadata_round_trip(tmp_path):
    recs = [CorpusRecord(page_id=f"p{i}", book_id="bk", year=1540 + i,
                         city="Basel", image_path=f"pages/p{i}.png",
                         extra={"note": f"n{i}"}) for i in range(3)]
    path = tmp_path / "meta.csv"
    export_metadata(recs, path)
    back = ingest_metadata(path)
    assert [r.page_id for r in back] == ["p0", "p1", "p2"]
    assert back[1].year == 1541
    assert back[2].extra.get("note") == "n2"


def test_annotations_round_trip(tmp_path):
    anns = number_annotations("p0", "905") + number_annotations("p1", "3")
    path = tmp_path / "ann.csv"
    export_annotations(anns, path)
    back = ingest_annotations(path)
    assert len(back) == 4
    assert reconstruct_numbers([a for a in back if a.page_id == "p0"]) == ["905"]
    assert back[0].start and back[2].end


def test_occurrences_round_trip(tmp_path):
    occ = [TableOccurrence(table_type="right_ascension", book_id="b1",
                           year=1543, city="Wittenberg", page_ids=["p0", "p1"])]
    path = tmp_path / "occ.csv"
    export_occurrences(occ, path)
    back = ingest_occurrences(path)
    assert back[0].page_ids == ["p0", "p1"]
    assert back[0].table_type == "right_ascension"


def test_histograms_round_trip_exact(tmp_path):
    h1 = np.zeros(110)
    h1[13] = 2
    h1[105] = 1
    h2 = np.arange(110, dtype=float) / 7.0
    path = tmp_path / "hist.csv"
    export_histograms({"a": h1, "b": h2}, path)
    back = ingest_histograms(path)
    assert np.array_equal(back["a"], h1)
    assert np.array_equal(back["b"], h2)


def test_histogram_columns_layout():
    assert len(HISTOGRAM_COLUMNS) == 110
    assert HISTOGRAM_COLUMNS[0] == "b00"
    assert HISTOGRAM_COLUMNS[42] == "b42"
    assert HISTOGRAM_COLUMNS[100] == "u0"
    assert HISTOGRAM_COLUMNS[109] == "u9"


# ---------------------------------------------------------------------------
# malformed input reporting

def test_metadata_missing_column_raises_schema_error(tmp_path):
    path = tmp_path / "meta.csv"
    path.write_text("page_id,book_id,city\np0,b,x\n")
    with pytest.raises(SchemaError):
        ingest_metadata(path)


def test_metadata_malformed_rows_carry_line_numbers(tmp_path):
    path = tmp_path / "meta.csv"
    path.write_text(
        "page_id,book_id,year,city,image_path\n"
        "p0,b,1540,x,\n"
        ",b,1541,x,\n"
        "p2,b,notayear,x,\n"
    )
    with pytest.raises(MalformedRowsError) as exc:
        ingest_metadata(path)
    lines = [n for n, _ in exc.value.rows]
    assert lines == [3, 4]


def test_metadata_duplicate_page_id_conflicts(tmp_path):
    path = tmp_path / "meta.csv"
    path.write_text(
        "page_id,book_id,year,city,image_path\n"
        "p0,b,1540,x,\np0,b,1541,x,\n"
    )
    with pytest.raises(ConflictError):
        ingest_metadata(path)


def test_metadata_year_range_check_optional(tmp_path):
    path = tmp_path / "meta.csv"
    path.write_text("page_id,book_id,year,city,image_path\np0,b,2020,x,\n")
    assert ingest_metadata(path)[0].year == 2020
    with pytest.raises(MalformedRowsError):
        ingest_metadata(path, check_years=True)


def test_annotation_bounds_validation(tmp_path):
    anns = number_annotations("p0", "12", x0=190)
    with pytest.raises(AnnotationError):
        validate_annotation_bounds(anns, {"p0": (100, 200)})
    validate_annotation_bounds(anns, {"p0": (100, 300)})
    with pytest.raises(AnnotationError):
        validate_annotation_bounds(anns, {"q0": (100, 300)})


def test_histogram_export_rejects_bad_shape(tmp_path):
    with pytest.raises(SchemaError):
        export_histograms({"a": np.zeros(10)}, tmp_path / "h.csv")


# ---------------------------------------------------------------------------
# store assembly

def test_store_accumulates_and_guards_duplicates():
    store = CorpusStore()
    store.add_record(CorpusRecord(page_id="p0", book_id="b", year=1540, city="x"))
    with pytest.raises(ConflictError):
        store.add_record(CorpusRecord(page_id="p0", book_id="b", year=1541, city="x"))
    for a in number_annotations("p0", "77"):
        store.add_annotation(a)
    assert len(store.annotations_for("p0")) == 2
    assert store.annotations_for("missing") == []


def test_store_attach_histograms_sets_density():
    store = CorpusStore()
    store.add_record(CorpusRecord(page_id="p0", book_id="b", year=1540, city="x"))
    h = np.zeros(110)
    h[5] = 3
    store.attach_histograms({"p0": h})
    rec = store.pages()[0]
    assert rec.density == 3
    assert np.array_equal(rec.histogram, h)

"""Synthetic table-page generator with exact ground truth.

Produces binary page images in early-print table layouts together with
per-digit annotations, reading-order numbers, and table occurrences.
Content generators cover four table families: random filler tables,
sun-position-in-zodiac calendars, right-ascension tables, and climate
zone tables. Layout constants keep glyph pitch inside the 8..10 px
shift band and row/column separations wide enough that ground-truth
bigram histograms are exact on noise-free renders.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError
from .fonts import Font, get_font, render_stroke_digit
from .preprocess import PageImage, save_page
from .recognizer import Patch
from .store import (
    CorpusStore,
    CorpusRecord,
    DigitAnnotation,
    TableOccurrence,
    export_annotations,
    export_histograms,
    export_metadata,
    export_occurrences,
    ground_truth_histogram,
)

OBLIQUITY_DEG = 23.5

MONTH_LENGTHS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
MONTH_TAGS = ("am", "et", "mo", "ax", "ma", "eu", "os", "ut", "se", "ot", "ae", "mx")

SUN_ZODIAC_START = {"nostro": 290.0, "veterum": 285.0}
SPLIT_CHUNKS = {1: (12,), 2: (6, 6), 9: (2, 2, 2, 1, 1, 1, 1, 1, 1)}

MARGIN = 24
ROW_PITCH = 20
COL_GAP = 18


# ---------------------------------------------------------------------------
# astronomical content

def right_ascension(lambda_deg: float, obliquity_deg: float = OBLIQUITY_DEG) -> float:
    """Ecliptic longitude to right ascension, degrees in [0, 360)."""
    lam = math.radians(lambda_deg)
    eps = math.radians(obliquity_deg)
    alpha = math.degrees(math.atan2(math.cos(eps) * math.sin(lam), math.cos(lam)))
    return alpha % 360.0


def declination(lambda_deg: float, obliquity_deg: float = OBLIQUITY_DEG) -> float:
    lam = math.radians(lambda_deg)
    eps = math.radians(obliquity_deg)
    return math.degrees(math.asin(math.sin(eps) * math.sin(lam)))


def format_degrees_minutes(value_deg: float) -> tuple[int, int]:
    """Whole degrees plus minutes rounded half-up, without carry.

    Historical layout: a frame of 59.996 degrees prints as (59, 60),
    not (60, 0); the minute column may legitimately show 60.
    """
    d = int(math.floor(value_deg))
    m = int(math.floor((value_deg - d) * 60.0 + 0.5))
    return d, m


def solar_longitude(day_of_year: int, variant: str) -> float:
    if variant not in SUN_ZODIAC_START:
        raise DataError(f"unknown calendar variant {variant!r}")
    if not 1 <= day_of_year <= 365:
        raise DataError(f"day_of_year {day_of_year} outside 1..365")
    return (SUN_ZODIAC_START[variant] + (day_of_year - 1) * 360.0 / 365.0) % 360.0

def zodiac_position(lambda_deg: float) -> tuple[int, int]:
    """(sign index 0..11, printed degree within sign 1..30)."""
    lam = lambda_deg % 360.0
    return int(lam // 30.0), int(math.floor(lam % 30.0)) + 1


def sun_zodiac_rows(variant: str) -> list[list[tuple[int, int]]]:
    """Per month: [(day of month, degree within sign), ...]."""
    months = []
    day_of_year = 0
    for length in MONTH_LENGTHS:
        rows = []
        for day in range(1, length + 1):
            day_of_year += 1
            lam = solar_longitude(day_of_year, variant)
            rows.append((day, zodiac_position(lam)[1]))
        months.append(rows)
    return months


def right_ascension_rows(obliquity_deg: float = OBLIQUITY_DEG) -> list[tuple[int, int, int]]:
    """(longitude 1..90, printed degrees, printed minutes) for the first quadrant."""
    rows = []
    for lam in range(1, 91):
        d, m = format_degrees_minutes(right_ascension(lam, obliquity_deg))
        rows.append((lam, d, m))
    return rows


def longest_day_latitude(day_hours: float, obliquity_deg: float = OBLIQUITY_DEG) -> float:
    """Latitude whose longest day has the given length in hours.

    Half the daylight arc is h0 = day_hours * 15 / 2 degrees at summer
    solstice, where cos(h0) = -tan(lat) * tan(obliquity).
    """
    if not 12.0 <= day_hours <= 24.0:
        raise DataError(f"longest day {day_hours}h outside 12..24")
    h0 = math.radians(day_hours * 15.0 / 2.0)
    return math.degrees(math.atan2(-math.cos(h0), math.tan(math.radians(obliquity_deg))))


def climate_parallels(zones: int, obliquity_deg: float = OBLIQUITY_DEG) -> list[tuple[int, int, int, int, int]]:
    """(parallel index, day hours, day minutes, latitude deg, latitude min).

    Zones are bounded by parallels spaced a quarter hour of longest day
    apart, two parallels per zone plus the shared southern start. The
    7 and 9 zone schemes start at 12h45m (classical first climate);
    the 24 zone scheme starts at the equator and ends at 24h.
    """
    if zones in (7, 9):
        start = 12.75
    elif zones == 24:
        start = 12.0
    else:
        raise DataError(f"unsupported zone count {zones}; expected 7, 9, or 24")
    rows = []
    for j in range(2 * zones + 1):
        day = start + 0.25 * j
        total_min = round(day * 60.0)
        lat = longest_day_latitude(day, obliquity_deg)
        ld, lm = format_degrees_minutes(lat)
        rows.append((j + 1, total_min // 60, total_min % 60, ld, lm))
    return rows


# ---------------------------------------------------------------------------
# page rendering

@dataclass
class RenderedPage:
    pixels: np.ndarray
    annotations: list[DigitAnnotation]
    numbers: list[str]
    kind: str
    font: str
    meta: dict = field(default_factory=dict)
    page_id: str = ""

    def page_image(self) -> PageImage:
        return PageImage(pixels=self.pixels.astype(np.float32), binary=bool(self.meta.get("binary", True)),
                         source=self.page_id or self.kind)

    def density(self) -> int:
        return int(ground_truth_histogram(self.annotations).total)


class PageRenderer:
    """Paints glyphs onto a binary canvas and records digit annotations."""

    def __init__(self, height: int, width: int, font: Font,
                 rng: np.random.Generator | None = None,
                 glyph_value_jitter: float = 0.0,
                 stroke_jitter_deg: float = 0.0):
        self.canvas = np.zeros((height, width), dtype=np.float32)
        self.font = font
        self.rng = rng
        self.glyph_value_jitter = glyph_value_jitter
        self.stroke_jitter_deg = stroke_jitter_deg
        self.annotations: list[DigitAnnotation] = []
        self.numbers: list[str] = []

    def _glyph(self, ch: str) -> np.ndarray:
        if self.font.name == "quill" and self.stroke_jitter_deg > 0 and self.rng is not None:
            rot = float(self.rng.uniform(-self.stroke_jitter_deg, self.stroke_jitter_deg))
            shear = float(self.rng.uniform(-self.stroke_jitter_deg, self.stroke_jitter_deg))
            return render_stroke_digit(ch, rotation_deg=rot, shear_deg=shear)
        return self.font.digit(ch)

    def paint(self, y: int, x: int, glyph: np.ndarray) -> tuple[int, int]:
        gh, gw = glyph.shape
        if y < 0 or x < 0 or y + gh > self.canvas.shape[0] or x + gw > self.canvas.shape[1]:
            raise DataError(f"glyph at ({y},{x}) size ({gh},{gw}) exceeds page {self.canvas.shape}")
        value = 1.0
        if self.glyph_value_jitter > 0 and self.rng is not None:
            value = 1.0 + float(self.rng.uniform(-self.glyph_value_jitter, self.glyph_value_jitter))
        region = self.canvas[y : y + gh, x : x + gw]
        np.maximum(region, glyph * value, out=region)
        return gh, gw

    def draw_number(self, y: int, x: int, text: str) -> int:
        """Draw a digit string, emit annotations, return the end pen x."""
        if not text or not text.isdigit():
            raise DataError(f"draw_number expects digits, got {text!r}")
        base = self.font.height
        for i, ch in enumerate(text):
            glyph = self._glyph(ch)
            gh, gw = glyph.shape
            gy = y + base - gh
            self.paint(gy, x, glyph)
            self.annotations.append(DigitAnnotation(
                page_id="", digit=int(ch), x=x, y=gy, w=gw, h=gh,
                start=(i == 0), end=(i == len(text) - 1)))
            x += self.font.advance
        self.numbers.append(text)
        return x

    def draw_word(self, y: int, x: int, word: str, letter_font: Font | None = None) -> int:
        """Draw non-digit letters; no annotations, pure contrast ink."""
        lf = letter_font or get_font("press")
        base = lf.height
        for ch in word:
            glyph = lf.letters.get(ch)
            if glyph is None:
                continue
            gh, gw = glyph.shape
            self.paint(y + base - gh, x, glyph)
            x += lf.advance
        return x

    def hline(self, y: int, x0: int, x1: int, thickness: int = 1):
        self.canvas[y : y + thickness, x0:x1] = 1.0

    def vline(self, x: int, y0: int, y1: int, thickness: int = 1):
        self.canvas[y0:y1, x : x + thickness] = 1.0

    def doodle(self, y: int, x: int, size: int = 14):
        """Small ornament: concentric arcs with a cross, contrast ink."""
        t = np.linspace(0.0, 2.0 * np.pi, 90)
        for r in (size * 0.45, size * 0.28):
            ys = np.clip(y + size / 2 + r * np.sin(t), 0, self.canvas.shape[0] - 1).astype(int)
            xs = np.clip(x + size / 2 + r * np.cos(t), 0, self.canvas.shape[1] - 1).astype(int)
            self.canvas[ys, xs] = 1.0
        c = size // 2
        self.hline(y + c, x + 2, x + size - 2)
        self.vline(x + c, y + 2, y + size - 2)

    def finish(self, kind: str, meta: dict | None = None) -> RenderedPage:
        return RenderedPage(pixels=(self.canvas > 0).astype(np.float32) if self.glyph_value_jitter == 0
                            else np.clip(self.canvas, 0.0, 1.25).astype(np.float32),
                            annotations=list(self.annotations), numbers=list(self.numbers),
                            kind=kind, font=self.font.name, meta=dict(meta or {}))


def _number_width(n_digits: int, font: Font) -> int:
    return (n_digits - 1) * font.advance + max(g.shape[1] for g in font.digits.values())


def _separable(digits: str) -> bool:
    """True when no adjacent-pair label repeats within two positions.

    Repeats at lag 1 ("jjj") or lag 2 ("jkjk") put two peaks of the same
    pair map one or two glyph advances apart, inside the center-linkage
    cut, where they merge into a single count. Lag >= 3 is past the cut.
    """
    pairs = [digits[i:i + 2] for i in range(len(digits) - 1)]
    return all(p != q for lag in (1, 2) for p, q in zip(pairs, pairs[lag:]))


# ---------------------------------------------------------------------------
# table renderers

def render_random_table(rng: np.random.Generator,
                        rows: int = 12, cols: int = 4,
                        font: str | Font = "press",
                        length_weights: dict[int, float] | None = None,
                        density: int | None = None,
                        rules: bool = True,
                        header: bool = False,
                        glyph_value_jitter: float = 0.0,
                        row_pitch: int = ROW_PITCH,
                        col_gap: int = COL_GAP,
                        margin: int = MARGIN) -> RenderedPage:
    """Grid of random numbers; hits an exact pair-count density if asked.

    A number of length L contributes L-1 adjacent pairs when L >= 2 and
    one single-digit event when L == 1, so the page total is steered
    cell by cell and the last cells are left blank once the budget is
    spent. Raises if the grid cannot realize the requested density.
    """
    f = get_font(font) if isinstance(font, str) else font
    weights = dict(length_weights or {1: 0.1, 2: 0.35, 3: 0.35, 4: 0.2})
    lengths = sorted(weights)
    if any(l < 1 or l > 6 for l in lengths):
        raise DataError("number lengths must be in 1..6")
    probs = np.array([weights[l] for l in lengths], dtype=float)
    probs = probs / probs.sum()
    max_len = max(lengths)
    cell_w = _number_width(max_len, f)
    head_h = (f.height + 8) if header else 0
    height = 2 * margin + head_h + rows * row_pitch
    width = 2 * margin + cols * cell_w + (cols - 1) * col_gap
    r = PageRenderer(height, width, f, rng=rng, glyph_value_jitter=glyph_value_jitter,
                     stroke_jitter_deg=1.5 if glyph_value_jitter > 0 else 0.0)

    def contribution(L: int) -> int:
        return L - 1 if L >= 2 else 1

    budget = density
    placed = 0
    for i in range(rows):
        for j in range(cols):
            if budget is not None and budget == 0:
                continue
            if budget is None:
                L = int(rng.choice(lengths, p=probs))
            else:
                ok = [l for l in lengths if contribution(l) <= budget]
                if not ok:
                    ok = [l for l in (2, 1) if contribution(l) <= budget]
                if not ok:
                    raise DataError(f"cannot realize residual density {budget}")
                p = np.array([weights.get(l, 0.1) for l in ok], dtype=float)
                L = int(rng.choice(ok, p=p / p.sum()))
                budget -= contribution(L)
            while True:
                first = str(rng.integers(1, 10)) if L > 1 else str(rng.integers(0, 10))
                rest = "".join(str(rng.integers(0, 10)) for _ in range(L - 1))
                if _separable(first + rest):
                    break
            y = margin + head_h + i * row_pitch
            x = margin + j * (cell_w + col_gap)
            r.draw_number(y, x, first + rest)
            placed += 1
    if budget is not None and budget > 0:
        raise DataError(f"grid too small for density: {budget} pairs left after {placed} cells")
    if header:
        r.draw_word(margin - 4, margin, "metas")
        r.doodle(margin - 6, width - margin - 18, 14)
    if rules:
        r.hline(margin + head_h - 6, margin - 8, width - margin + 8)
        r.hline(height - margin + 8, margin - 8, width - margin + 8)
        for j in range(1, cols):
            x = margin + j * (cell_w + col_gap) - col_gap // 2
            r.vline(x, margin + head_h - 6, height - margin + 8)
    return r.finish("random", {"rows": rows, "cols": cols, "binary": glyph_value_jitter == 0})


def render_sun_zodiac(variant: str, split: int = 1, part: int = 0,
                      font: str | Font = "press",
                      rng: np.random.Generator | None = None,
                      glyph_value_jitter: float = 0.0,
                      row_pitch: int = 18, col_gap: int = COL_GAP,
                      margin: int = MARGIN) -> RenderedPage:
    """One page of the sun-in-zodiac calendar: day and degree per month."""
    if split not in SPLIT_CHUNKS:
        raise DataError(f"split must be one of {sorted(SPLIT_CHUNKS)}")
    chunks = SPLIT_CHUNKS[split]
    if not 0 <= part < len(chunks):
        raise DataError(f"part {part} outside 0..{len(chunks) - 1} for split {split}")
    f = get_font(font) if isinstance(font, str) else font
    months = sun_zodiac_rows(variant)
    start = sum(chunks[:part])
    chunk = list(range(start, start + chunks[part]))
    two = _number_width(2, f)
    pair_w = two + 14 + two
    height = 2 * margin + f.height + 10 + 31 * row_pitch
    width = 2 * margin + len(chunk) * pair_w + (len(chunk) - 1) * col_gap
    r = PageRenderer(height, width, f, rng=rng, glyph_value_jitter=glyph_value_jitter,
                     stroke_jitter_deg=1.5 if glyph_value_jitter > 0 else 0.0)
    top = margin + f.height + 10
    for ci, mi in enumerate(chunk):
        x0 = margin + ci * (pair_w + col_gap)
        r.draw_word(margin - 2, x0, MONTH_TAGS[mi])
        for ri, (day, deg) in enumerate(months[mi]):
            y = top + ri * row_pitch
            r.draw_number(y, x0, str(day))
            r.draw_number(y, x0 + two + 14, str(deg))
        if ci:
            r.vline(x0 - col_gap // 2, top - 6, top + 31 * row_pitch)
    r.hline(top - 8, margin - 6, width - margin + 6)
    return r.finish("sun_zodiac", {"variant": variant, "split": split, "part": part,
                                   "binary": glyph_value_jitter == 0})


def render_right_ascension(obliquity_deg: float = OBLIQUITY_DEG,
                           font: str | Font = "press",
                           rng: np.random.Generator | None = None,
                           glyph_value_jitter: float = 0.0,
                           row_pitch: int = 18, col_gap: int = COL_GAP,
                           margin: int = MARGIN) -> RenderedPage:
    """First-quadrant right ascension table: 30 rows by 3 sign columns."""
    f = get_font(font) if isinstance(font, str) else font
    table = right_ascension_rows(obliquity_deg)
    two = _number_width(2, f)
    group_w = two + 14 + two + 14 + two
    height = 2 * margin + 30 * row_pitch
    width = 2 * margin + 3 * group_w + 2 * col_gap
    r = PageRenderer(height, width, f, rng=rng, glyph_value_jitter=glyph_value_jitter,
                     stroke_jitter_deg=1.5 if glyph_value_jitter > 0 else 0.0)
    for g in range(3):
        x0 = margin + g * (group_w + col_gap)
        for ri in range(30):
            lam, d, m = table[30 * g + ri]
            y = margin + ri * row_pitch
            r.draw_number(y, x0, str(lam - 30 * g))
            r.draw_number(y, x0 + two + 14, str(d))
            r.draw_number(y, x0 + 2 * (two + 14), str(m))
        if g:
            r.vline(x0 - col_gap // 2, margin - 6, height - margin + 6)
    return r.finish("right_ascension", {"obliquity": obliquity_deg,
                                        "binary": glyph_value_jitter == 0})


def render_climate(zones: int = 7,
                   font: str | Font = "press",
                   rng: np.random.Generator | None = None,
                   glyph_value_jitter: float = 0.0,
                   row_pitch: int = ROW_PITCH, col_gap: int = COL_GAP,
                   margin: int = MARGIN) -> RenderedPage:
    """Climate table: parallel index, longest day h+m, latitude deg+min."""
    f = get_font(font) if isinstance(font, str) else font
    rows = climate_parallels(zones)
    two = _number_width(2, f)
    height = 2 * margin + len(rows) * row_pitch
    width = 2 * margin + 5 * two + 4 * col_gap
    r = PageRenderer(height, width, f, rng=rng, glyph_value_jitter=glyph_value_jitter,
                     stroke_jitter_deg=1.5 if glyph_value_jitter > 0 else 0.0)
    for ri, row in enumerate(rows):
        y = margin + ri * row_pitch
        for ci, val in enumerate(row):
            r.draw_number(y, margin + ci * (two + col_gap), str(val))
    return r.finish("climate", {"zones": zones, "binary": glyph_value_jitter == 0})


_RENDERERS = {
    "random": render_random_table,
    "sun_zodiac": render_sun_zodiac,
    "right_ascension": render_right_ascension,
    "climate": render_climate,
}


# ---------------------------------------------------------------------------
# print noise

def apply_print_noise(pixels: np.ndarray, rng: np.random.Generator,
                      speckle: float = 0.01, blur: float = 0.6,
                      contrast_jitter: float = 0.08,
                      background: float = 0.88, ink: float = 0.12) -> np.ndarray:
    """Binary ink mask to noisy grayscale scan: jitter, speckle, blur."""
    if not 0.0 <= speckle <= 0.02:
        raise DataError("speckle fraction must be in [0, 0.02]")
    if not 0.0 <= blur <= 1.5:
        raise DataError("blur sigma must be in [0, 1.5]")
    alpha = np.clip(pixels.astype(np.float64), 0.0, 1.0)
    depth = (background - ink) * (1.0 + rng.uniform(-contrast_jitter, contrast_jitter))
    g = background - depth * alpha
    if speckle > 0:
        n = int(speckle * g.size)
        ys = rng.integers(0, g.shape[0], size=n)
        xs = rng.integers(0, g.shape[1], size=n)
        dark = rng.random(n) < 0.5
        g[ys[dark], xs[dark]] = ink + 0.05
        g[ys[~dark], xs[~dark]] = min(1.0, background + 0.06)
    if blur > 0:
        g = ndimage.gaussian_filter(g, sigma=blur, mode="nearest")
    g = g + rng.normal(0.0, 0.01, size=g.shape)
    return np.clip(g, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# corpus assembly

def _expand_page_specs(spec: dict) -> list[dict]:
    """One plan entry may expand to several physical pages (split groups)."""
    kind = spec.get("kind")
    if kind not in _RENDERERS:
        raise DataError(f"unknown page kind {kind!r}")
    copies = int(spec.get("copies", 1))
    out = []
    for _ in range(copies):
        if kind == "sun_zodiac" and spec.get("part") is None:
            split = int(spec.get("split", 1))
            if split not in SPLIT_CHUNKS:
                raise DataError(f"split must be one of {sorted(SPLIT_CHUNKS)}")
            group = [dict(spec, part=p) for p in range(len(SPLIT_CHUNKS[split]))]
            out.append({"group": group, "table_type": f"sun_zodiac_{spec.get('variant', 'nostro')}"})
        elif kind == "sun_zodiac":
            out.append({"group": [dict(spec)],
                        "table_type": f"sun_zodiac_{spec.get('variant', 'nostro')}"})
        elif kind == "right_ascension":
            out.append({"group": [dict(spec)], "table_type": "right_ascension"})
        elif kind == "climate":
            out.append({"group": [dict(spec)], "table_type": f"climate_{spec.get('zones', 7)}"})
        else:
            out.append({"group": [dict(spec)], "table_type": None})
    return out


def _render_one(spec: dict, font: str, rng: np.random.Generator) -> RenderedPage:
    kind = spec["kind"]
    kwargs = {k: v for k, v in spec.items()
              if k not in ("kind", "copies", "content_seed", "noise")}
    kwargs.setdefault("font", font)
    if kind == "random":
        content_rng = (np.random.default_rng(np.random.SeedSequence([int(spec["content_seed"]), 41]))
                       if spec.get("content_seed") is not None else rng)
        kwargs.pop("content_seed", None)
        return render_random_table(content_rng, **kwargs)
    return _RENDERERS[kind](rng=rng, **kwargs)


def build_synthetic_corpus(plan: dict, out_dir: str | None = None,
                           keep_images: bool = False
                           ) -> tuple[CorpusStore, dict[str, RenderedPage]]:
    """Render a whole plan into a corpus store with exact ground truth.

    Each record gets an annotated-ground-truth histogram and matching
    density. Page rng streams are seeded per (plan seed, book index,
    page index) so results do not depend on evaluation order. When
    out_dir is given, writes page PNGs plus the four CSV tables.
    """
    seed = int(plan.get("seed", 0))
    noise_default = plan.get("noise")
    store = CorpusStore()
    kept: dict[str, RenderedPage] = {}
    if out_dir:
        os.makedirs(os.path.join(out_dir, "pages"), exist_ok=True)
    books = plan.get("books")
    if not books:
        raise DataError("plan has no books")
    for bi, book in enumerate(books):
        for key in ("book_id", "year", "city"):
            if key not in book:
                raise DataError(f"book {bi} missing {key!r}")
        font = book.get("font", "press")
        noise = book.get("noise", noise_default)
        page_counter = 0
        for spec in book.get("pages", []):
            for item in _expand_page_specs(spec):
                group_ids = []
                for sub in item["group"]:
                    rng = np.random.default_rng(np.random.SeedSequence([seed, bi, page_counter]))
                    page = _render_one(sub, font, rng)
                    page_id = f"{book['book_id']}_p{page_counter:03d}"
                    page.page_id = page_id
                    for ann in page.annotations:
                        ann.page_id = page_id
                    page_counter += 1
                    group_ids.append(page_id)
                    pixels = page.pixels
                    binary = bool(page.meta.get("binary", True))
                    if noise:
                        pixels = apply_print_noise(pixels, rng, **noise)
                        binary = False
                    image_path = ""
                    if out_dir and plan.get("write_images", True):
                        image_path = os.path.join("pages", f"{page_id}.png")
                        save_page(pixels if not binary else 1.0 - pixels,
                                  os.path.join(out_dir, image_path))
                    hist = ground_truth_histogram(page.annotations)
                    store.add_record(CorpusRecord(
                        page_id=page_id, book_id=book["book_id"], year=int(book["year"]),
                        city=str(book["city"]), image_path=image_path,
                        density=int(hist.total), histogram=hist.counts))
                    for ann in page.annotations:
                        store.add_annotation(ann)
                    if keep_images:
                        page.pixels = pixels
                        page.meta["binary"] = binary
                        kept[page_id] = page
                if item["table_type"]:
                    store.occurrences.append(TableOccurrence(
                        table_type=item["table_type"], book_id=book["book_id"],
                        year=int(book["year"]), city=str(book["city"]),
                        page_ids=list(group_ids)))
    if out_dir:
        export_metadata(store.pages(), os.path.join(out_dir, "metadata.csv"))
        flat = [a for pid in store.annotations for a in store.annotations[pid]]
        export_annotations(flat, os.path.join(out_dir, "annotations.csv"))
        export_occurrences(store.occurrences, os.path.join(out_dir, "occurrences.csv"))
        export_histograms({pid: rec.histogram for pid, rec in store.records.items()
                           if rec.histogram is not None},
                          os.path.join(out_dir, "histograms.csv"))
        with open(os.path.join(out_dir, "plan.json"), "w") as fh:
            json.dump(plan, fh, indent=2, sort_keys=True)
    return store, kept


# ---------------------------------------------------------------------------
# patch sampling

def digit_patches(pages: list[RenderedPage], size: int = 28,
                  per_digit: int | None = None,
                  rng: np.random.Generator | None = None,
                  binarized: dict[str, np.ndarray] | None = None) -> list[Patch]:
    """Crop one patch per annotation, balanced per digit class if asked.

    binarized optionally maps page_id to the preprocessed pixels the
    patch should be cut from (noisy pages after binarize); otherwise
    the clean render is used.
    """
    by_digit: dict[int, list[Patch]] = {d: [] for d in range(10)}
    half = size // 2
    for page in pages:
        pix = binarized.get(page.page_id, page.pixels) if binarized else page.pixels
        H, W = pix.shape
        for ann in page.annotations:
            cy, cx = ann.center
            y0 = int(round(cy)) - half
            x0 = int(round(cx)) - half
            if y0 < 0 or x0 < 0 or y0 + size > H or x0 + size > W:
                continue
            mask = np.zeros((size, size), dtype=bool)
            my0 = max(0, ann.y - y0)
            mx0 = max(0, ann.x - x0)
            mask[my0 : min(size, ann.y + ann.h - y0), mx0 : min(size, ann.x + ann.w - x0)] = True
            by_digit[ann.digit].append(Patch(
                pixels=pix[y0 : y0 + size, x0 : x0 + size].astype(np.float32),
                label=ann.digit, bbox_mask=mask, kind="digit"))
    if per_digit is not None:
        if rng is None:
            raise DataError("per_digit selection needs an rng")
        for d, items in by_digit.items():
            if len(items) < per_digit:
                raise DataError(f"only {len(items)} patches for digit {d}, need {per_digit}")
            idx = rng.choice(len(items), size=per_digit, replace=False)
            by_digit[d] = [items[i] for i in sorted(idx)]
    out: list[Patch] = []
    for d in range(10):
        out.extend(by_digit[d])
    return out


def contrast_patches(pages: list[RenderedPage], n: int, size: int = 28,
                     rng: np.random.Generator | None = None,
                     binarized: dict[str, np.ndarray] | None = None,
                     max_tries: int = 20000) -> list[Patch]:
    """Crops that overlap no digit bbox: rules, letters, blank paper."""
    rng = rng or np.random.default_rng(0)
    out: list[Patch] = []
    tries = 0
    empty_mask = np.zeros((size, size), dtype=bool)
    while len(out) < n and tries < max_tries:
        tries += 1
        page = pages[int(rng.integers(0, len(pages)))]
        pix = binarized.get(page.page_id, page.pixels) if binarized else page.pixels
        H, W = pix.shape
        if H < size or W < size:
            continue
        y0 = int(rng.integers(0, H - size + 1))
        x0 = int(rng.integers(0, W - size + 1))
        clash = False
        for ann in page.annotations:
            if (ann.x < x0 + size + 2 and ann.x + ann.w > x0 - 2
                    and ann.y < y0 + size + 2 and ann.y + ann.h > y0 - 2):
                clash = True
                break
        if clash:
            continue
        out.append(Patch(pixels=pix[y0 : y0 + size, x0 : x0 + size].astype(np.float32),
                         label=None, bbox_mask=empty_mask.copy(), kind="contrast"))
    if len(out) < n:
        raise DataError(f"found only {len(out)}/{n} contrast patches after {max_tries} tries")
    return out


# ---------------------------------------------------------------------------
# canned corpus plans for the analytics studies

def make_temporal_plan(seed: int = 7,
                       year_lo: int = 1540, year_hi: int = 1565,
                       books_per_year: int = 5, pages_per_book: int = 15,
                       burst_years: tuple[int, ...] = (1551, 1552, 1553, 1554, 1555),
                       burst_pages: int = 16) -> dict:
    """Background of diverse random tables plus a reprint burst.

    The burst is the same deterministic right-ascension table repeated
    in every burst-year book, so every burst page lands in the same
    cluster and the window entropy dips around the middle burst year.
    """
    books = []
    for year in range(year_lo, year_hi + 1):
        for b in range(books_per_year):
            book_id = f"bg{year}{chr(ord('a') + b)}"
            pages = [{"kind": "random", "rows": 10, "cols": 4,
                      "content_seed": seed * 1000003 + year * 101 + b * 17 + p}
                     for p in range(pages_per_book)]
            books.append({"book_id": book_id, "year": year, "city": "Nuremberg",
                          "font": "press", "pages": pages})
        if year in burst_years:
            books.append({"book_id": f"rx{year}", "year": year, "city": "Wittenberg",
                          "font": "press",
                          "pages": [{"kind": "right_ascension", "copies": burst_pages}]})
    return {"seed": seed, "books": books}


def make_city_plan(seed: int = 11,
                   cities: dict[str, dict] | None = None) -> dict:
    """Cities with controlled output diversity for geographic entropy.

    Each city dict: n_pages, mode 'repetitive' (one table reprinted) or
    'diverse' (fresh random tables), year.
    """
    cities = cities or {
        "Venice": {"n_pages": 60, "mode": "diverse", "year": 1550},
        "Leipzig": {"n_pages": 60, "mode": "repetitive", "year": 1550},
        "Basel": {"n_pages": 25, "mode": "diverse", "year": 1551},
    }
    books = []
    for ci, (city, cfg) in enumerate(sorted(cities.items())):
        if cfg["mode"] == "repetitive":
            pages: list[dict] = [{"kind": "climate", "zones": 7, "copies": cfg["n_pages"]}]
        elif cfg["mode"] == "diverse":
            pages = [{"kind": "random", "rows": 9, "cols": 4,
                      "content_seed": seed * 9176 + ci * 131 + p}
                     for p in range(cfg["n_pages"])]
        else:
            raise DataError(f"unknown city mode {cfg['mode']!r}")
        books.append({"book_id": f"city_{city.lower()}", "year": int(cfg["year"]),
                      "city": city, "font": "press", "pages": pages})
    return {"seed": seed, "books": books}


def make_spread_plan(seed: int = 13) -> dict:
    """Table types reprinted across cities and years for spread chains."""
    placements = [
        ("right_ascension", [("Wittenberg", 1543), ("Paris", 1549), ("Venice", 1551),
                             ("London", 1556), ("Basel", 1549)]),
        ("sun_zodiac_nostro", [("Nuremberg", 1544), ("Leipzig", 1547), ("Paris", 1553)]),
        ("climate_7", [("Venice", 1540), ("Rome", 1545), ("Antwerp", 1545), ("Krakow", 1552)]),
    ]
    kind_for = {"right_ascension": {"kind": "right_ascension"},
                "sun_zodiac_nostro": {"kind": "sun_zodiac", "variant": "nostro", "split": 9, "part": 4},
                "climate_7": {"kind": "climate", "zones": 7}}
    books: dict[tuple[str, int], dict] = {}
    for tt, places in placements:
        for city, year in places:
            key = (city, year)
            if key not in books:
                books[key] = {"book_id": f"sp_{city.lower()}_{year}", "year": year,
                              "city": city, "font": "press", "pages": []}
            books[key]["pages"].append(dict(kind_for[tt]))
    return {"seed": seed, "books": [books[k] for k in sorted(books)]}

"""Digit fonts for the synthetic corpus.

Two hand-drawn bitmap faces plus one parameterized stroke face. All
glyphs are binary ink masks trimmed to their tight bbox; a font's
advance fixes the pen pitch so that adjacent digits in a number sit
8 to 10 px apart at reference scale. A small set of letter glyphs and
procedural doodles feeds the contrast patch pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

_PRESS_DIGITS = {
    "0": """
.#####.
##...##
##...##
##...##
##...##
##...##
##...##
##...##
##...##
##...##
.#####.
""",
    "1": """
..##...
.###...
..##...
..##...
..##...
..##...
..##...
..##...
..##...
..##...
.######
""",
    "2": """
.#####.
##...##
.....##
.....##
....##.
...##..
..##...
.##....
##.....
##.....
#######
""",
    "3": """
.#####.
##...##
.....##
.....##
..####.
.....##
.....##
.....##
.....##
##...##
.#####.
""",
    "4": """
....##.
...###.
..####.
.##.##.
##..##.
#######
....##.
....##.
....##.
....##.
....##.
""",
    "5": """
######.
##.....
##.....
##.....
#####..
....##.
.....##
.....##
.....##
##...##
.#####.
""",
    "6": """
..####.
.##....
##.....
##.....
######.
##...##
##...##
##...##
##...##
##...##
.#####.
""",
    "7": """
#######
.....##
....##.
....##.
...##..
...##..
..##...
..##...
..##...
.##....
.##....
""",
    "8": """
..###..
.##.##.
.##.##.
.##.##.
..###..
.##.##.
##...##
##...##
##...##
.##.##.
..###..
""",
    "9": """
.#####.
##...##
##...##
##...##
##...##
.######
.....##
.....##
....##.
...##..
.####..
""",
}

_GALLEY_DIGITS = {
    "0": """
.####.
#....#
#....#
#....#
#....#
#....#
#....#
#....#
.####.
""",
    "1": """
..#...
.##...
..#...
..#...
..#...
..#...
..#...
..#...
.####.
""",
    "2": """
.####.
#....#
.....#
....#.
...#..
..#...
.#....
#.....
######
""",
    "3": """
.####.
#....#
.....#
..###.
.....#
.....#
.....#
#....#
.####.
""",
    "4": """
...##.
..#.#.
.#..#.
#...#.
######
....#.
....#.
....#.
....#.
""",
    "5": """
#####.
#.....
#.....
####..
....#.
.....#
.....#
#....#
.####.
""",
    "6": """
..###.
.#....
#.....
####..
#...#.
#....#
#....#
#....#
.####.
""",
    "7": """
######
.....#
....#.
....#.
...#..
...#..
..#...
..#...
..#...
""",
    "8": """
..##..
.#..#.
.#..#.
..##..
.#..#.
#....#
#....#
.#..#.
..##..
""",
    "9": """
.####.
#....#
#....#
#....#
.#####
.....#
....#.
...#..
.###..
""",
}

_PRESS_LETTERS = {
    "a": """
.......
.......
.......
.#####.
.....##
.######
##...##
##...##
##...##
##..###
.###.##
""",
    "e": """
.......
.......
.......
.#####.
##...##
##...##
#######
##.....
##.....
##...##
.#####.
""",
    "m": """
.......
.......
.......
######.
##.#.##
##.#.##
##.#.##
##.#.##
##.#.##
##.#.##
##.#.##
""",
    "o": """
.......
.......
.......
.#####.
##...##
##...##
##...##
##...##
##...##
##...##
.#####.
""",
    "s": """
.......
.......
.......
.#####.
##...##
##.....
.####..
...###.
.....##
##...##
.#####.
""",
    "t": """
..##...
..##...
..##...
######.
..##...
..##...
..##...
..##...
..##...
..##.##
...###.
""",
    "u": """
.......
.......
.......
##...##
##...##
##...##
##...##
##...##
##...##
##..###
.###.##
""",
    "x": """
.......
.......
.......
##...##
.##.##.
..###..
..###..
..###..
.##.##.
##...##
##...##
""",
}


def _parse_bitmap(art: str) -> np.ndarray:
    rows = [r for r in art.strip("\n").split("\n")]
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"ragged glyph art: widths {sorted(widths)}")
    return np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows], dtype=np.float32)


def _trim(glyph: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(glyph)
    if len(ys) == 0:
        raise DataError("empty glyph")
    return glyph[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


@dataclass
class Font:
    name: str
    advance: int
    digits: dict[str, np.ndarray]
    letters: dict[str, np.ndarray] = field(default_factory=dict)

    def digit(self, d: int | str) -> np.ndarray:
        key = str(d)
        if key not in self.digits:
            raise DataError(f"font {self.name} has no digit {key!r}")
        return self.digits[key]

    def templates(self) -> dict[int, list[np.ndarray]]:
        return {int(d): [g.astype(np.float64)] for d, g in self.digits.items()}

    @property
    def height(self) -> int:
        return max(g.shape[0] for g in self.digits.values())


def _bitmap_font(name: str, advance: int, digit_art: dict[str, str], letter_art: dict[str, str]) -> Font:
    digits = {d: _trim(_parse_bitmap(a)) for d, a in digit_art.items()}
    letters = {c: _trim(_parse_bitmap(a)) for c, a in letter_art.items()}
    return Font(name, advance, digits, letters)


# ---------------------------------------------------------------------------
# stroke font

_STROKE_PATHS: dict[str, list] = {
    "0": [("ellipse", 0.5, 0.5, 0.30, 0.44, 0, 360)],
    "1": [("line", [(0.28, 0.20), (0.54, 0.04), (0.54, 0.96)]), ("line", [(0.30, 0.96), (0.78, 0.96)])],
    "2": [
        ("ellipse", 0.5, 0.28, 0.30, 0.24, 160, 360),
        ("line", [(0.80, 0.32), (0.18, 0.96)]),
        ("line", [(0.18, 0.96), (0.84, 0.96)]),
    ],
    "3": [("ellipse", 0.5, 0.27, 0.28, 0.23, 150, 390), ("ellipse", 0.5, 0.73, 0.30, 0.23, 170, 410)],
    "4": [("line", [(0.66, 0.04), (0.14, 0.60), (0.88, 0.60)]), ("line", [(0.66, 0.04), (0.66, 0.96)])],
    "5": [
        ("line", [(0.82, 0.04), (0.22, 0.04), (0.22, 0.44)]),
        ("ellipse", 0.48, 0.68, 0.32, 0.27, 215, 480),
    ],
    "6": [("line", [(0.64, 0.04), (0.30, 0.40), (0.22, 0.66)]), ("ellipse", 0.5, 0.70, 0.27, 0.25, 0, 360)],
    "7": [("line", [(0.14, 0.04), (0.86, 0.04), (0.40, 0.96)])],
    "8": [("ellipse", 0.5, 0.27, 0.25, 0.22, 0, 360), ("ellipse", 0.5, 0.73, 0.29, 0.23, 0, 360)],
    "9": [("ellipse", 0.5, 0.30, 0.27, 0.25, 0, 360), ("line", [(0.77, 0.34), (0.68, 0.66), (0.44, 0.96)])],
}


def _path_points(path, transform) -> np.ndarray:
    kind = path[0]
    if kind == "line":
        pts = []
        verts = path[1]
        for (x0, y0), (x1, y1) in zip(verts, verts[1:]):
            n = max(2, int(24 * np.hypot(x1 - x0, y1 - y0)) + 2)
            t = np.linspace(0.0, 1.0, n)
            pts.append(np.stack([x0 + (x1 - x0) * t, y0 + (y1 - y0) * t], axis=1))
        pts = np.concatenate(pts)
    elif kind == "ellipse":
        _, cx, cy, rx, ry, a0, a1 = path
        t = np.radians(np.linspace(a0, a1, max(16, int((a1 - a0) / 4) + 1)))
        pts = np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)
    else:
        raise DataError(f"unknown path kind {kind!r}")
    if transform is not None:
        c = np.array([0.5, 0.5])
        pts = (pts - c) @ transform.T + c
    return pts


def render_stroke_digit(
    d: int | str,
    height: int = 11,
    width: int = 7,
    thickness: float = 1.35,
    rotation_deg: float = 0.0,
    shear_deg: float = 0.0,
) -> np.ndarray:
    """Rasterize one stroke-font digit, optionally jittered per glyph."""
    key = str(d)
    if key not in _STROKE_PATHS:
        raise DataError(f"no stroke path for {key!r}")
    transform = None
    if rotation_deg or shear_deg:
        th = np.radians(rotation_deg)
        sh = np.radians(shear_deg)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        shr = np.array([[1.0, np.tan(sh)], [0.0, 1.0]])
        transform = rot @ shr
    ss = 4
    canvas = np.zeros((height * ss, width * ss), dtype=np.float32)
    rad = thickness * ss / 2.0
    irad = int(np.ceil(rad))
    yy, xx = np.mgrid[-irad : irad + 1, -irad : irad + 1]
    disk = (yy * yy + xx * xx) <= rad * rad
    for path in _STROKE_PATHS[key]:
        for px, py in _path_points(path, transform):
            cx = int(round(px * (width * ss - 1)))
            cy = int(round(py * (height * ss - 1)))
            y0, y1 = max(0, cy - irad), min(canvas.shape[0], cy + irad + 1)
            x0, x1 = max(0, cx - irad), min(canvas.shape[1], cx + irad + 1)
            canvas[y0:y1, x0:x1] = np.maximum(
                canvas[y0:y1, x0:x1],
                disk[y0 - (cy - irad) : y1 - (cy - irad), x0 - (cx - irad) : x1 - (cx - irad)],
            )
    coarse = canvas.reshape(height, ss, width, ss).mean(axis=(1, 3))
    return _trim((coarse >= 0.35).astype(np.float32))


def make_stroke_font(
    name: str = "quill",
    height: int = 11,
    thickness: float = 1.35,
    rotation_deg: float = 0.0,
    shear_deg: float = 0.0,
) -> Font:
    digits = {
        str(d): render_stroke_digit(d, height=height, thickness=thickness,
                                    rotation_deg=rotation_deg, shear_deg=shear_deg)
        for d in range(10)
    }
    return Font(name, advance=9, digits=digits)


# ---------------------------------------------------------------------------
# registry

_FONTS: dict[str, Font] = {}


def get_font(name: str) -> Font:
    if not _FONTS:
        _FONTS["press"] = _bitmap_font("press", 9, _PRESS_DIGITS, _PRESS_LETTERS)
        _FONTS["galley"] = _bitmap_font("galley", 8, _GALLEY_DIGITS, {})
        _FONTS["quill"] = make_stroke_font()
    if name not in _FONTS:
        raise DataError(f"unknown font {name!r}; have {sorted(_FONTS)}")
    return _FONTS[name]


def font_names() -> list[str]:
    get_font("press")
    return sorted(_FONTS)


def all_digit_templates(names: list[str] | None = None) -> dict[int, list[np.ndarray]]:
    """Template bank across fonts for the correlation oracle."""
    names = names or font_names()
    bank: dict[int, list[np.ndarray]] = {d: [] for d in range(10)}
    for n in names:
        for d, tpls in get_font(n).templates().items():
            bank[d].extend(tpls)
    return bank

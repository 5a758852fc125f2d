"""Corpus-level analytics: windowed entropy, geography, spread chains.

Entropy is always in nats. Temporal curves sample fixed-size windows
so entropy is comparable across times regardless of local page counts;
geographic entropy is reported relative to its own sample-size ceiling
ln(N) for the same reason.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError, UnknownCityError
from .store import TableOccurrence

WINDOW_SIZE = 80
WINDOW_RUNS = 20
DENSITY_THRESHOLDS = (0, 100, 200, 250, 300)
LOW_OUTPUT_PAGES = 100
EARTH_RADIUS_KM = 6371.0088


def shannon_entropy(labels: np.ndarray) -> float:
    """Entropy in nats of the empirical cluster distribution."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("entropy of an empty sample is undefined")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


# ---------------------------------------------------------------------------
# temporal window entropy

@dataclass
class EntropyCurve:
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    low_support: np.ndarray
    sigma: float
    n_window: int
    runs: int


def temporal_entropy(years: np.ndarray, labels: np.ndarray,
                     times: np.ndarray | None = None,
                     sigma: float = 3.0,
                     n_window: int = WINDOW_SIZE,
                     runs: int = WINDOW_RUNS,
                     densities: np.ndarray | None = None,
                     min_density: int = 0,
                     base_seed: int = 0) -> EntropyCurve:
    """Cluster entropy inside Gaussian year windows of fixed sample size.

    For each time t, pages are drawn N at a time with probability
    proportional to exp(-(year - t)^2 / (2 sigma^2)), without
    replacement when the eligible population allows it, otherwise with
    replacement and a low-support flag. min_density keeps only pages
    whose pair count reaches the threshold.
    """
    years = np.asarray(years, dtype=float)
    labels = np.asarray(labels)
    if years.shape != labels.shape:
        raise DataError("years and labels differ in length")
    if min_density:
        if densities is None:
            raise DataError("min_density filter needs densities")
        keep = np.asarray(densities) >= min_density
        years, labels = years[keep], labels[keep]
    if years.size == 0:
        raise DataError("no pages left after filtering")
    if times is None:
        times = np.arange(math.floor(years.min()), math.ceil(years.max()) + 1, dtype=float)
    times = np.asarray(times, dtype=float)
    mean = np.zeros(len(times))
    std = np.zeros(len(times))
    low = np.zeros(len(times), dtype=bool)
    for ti, t in enumerate(times):
        w = np.exp(-((years - t) ** 2) / (2.0 * sigma * sigma))
        total = w.sum()
        if total <= 0 or np.count_nonzero(w) == 0:
            raise DataError(f"no weight mass at t={t}")
        p = w / total
        eligible = int(np.count_nonzero(p))
        replace = eligible < n_window
        low[ti] = replace
        hs = np.empty(runs)
        for r in range(runs):
            rng = np.random.default_rng(np.random.SeedSequence([base_seed, ti, r]))
            idx = rng.choice(len(years), size=n_window, replace=replace, p=p)
            hs[r] = shannon_entropy(labels[idx])
        mean[ti] = hs.mean()
        std[ti] = hs.std()
    return EntropyCurve(times=times, mean=mean, std=std, low_support=low,
                        sigma=sigma, n_window=n_window, runs=runs)


def random_baseline_entropy(n_points: int = 2000, k: int = 1500,
                            n_window: int = WINDOW_SIZE, runs: int = WINDOW_RUNS,
                            seed: int = 0) -> tuple[float, float]:
    """Window entropy when histograms are featureless Gaussian noise.

    Standard-normal vectors in the 110-dim feature space are clustered
    and sampled exactly like a real window; the expected value sits
    just under ln(n_window) because an 80-draw sample rarely collides
    in 1500 clusters.
    """
    from .similarity import kmeans

    rng = np.random.default_rng(np.random.SeedSequence([seed, 37]))
    X = rng.normal(size=(n_points, 110))
    labels = kmeans(X, k=k, seed=seed).labels
    hs = np.empty(runs)
    for r in range(runs):
        sub = np.random.default_rng(np.random.SeedSequence([seed, 43, r]))
        hs[r] = shannon_entropy(labels[sub.choice(n_points, size=n_window, replace=False)])
    return float(hs.mean()), float(hs.std())


@dataclass
class DropAttribution:
    time: float
    depth: float
    cluster_deltas: list[tuple[int, float]]
    members: dict[int, list[str]]


def entropy_drop_attribution(curve: EntropyCurve,
                             years: np.ndarray, labels: np.ndarray,
                             page_ids: list[str],
                             top: int = 5) -> DropAttribution:
    """Locate the deepest dip and rank clusters by entropy displacement.

    The dip's window distribution is compared with the curve-wide
    average distribution; each cluster's contribution is the change in
    its -p ln p term, and the biggest movers explain the drop.
    """
    years = np.asarray(years, dtype=float)
    labels = np.asarray(labels)
    ti = int(np.argmin(curve.mean))
    t = float(curve.times[ti])
    depth = float(curve.mean.mean() - curve.mean[ti])
    w = np.exp(-((years - t) ** 2) / (2.0 * curve.sigma ** 2))
    p_window = w / w.sum()
    clusters = np.unique(labels)
    mass_win = np.array([p_window[labels == c].sum() for c in clusters])
    mass_all = np.array([(labels == c).mean() for c in clusters])

    def term(p: np.ndarray) -> np.ndarray:
        out = np.zeros_like(p)
        nz = p > 0
        out[nz] = -p[nz] * np.log(p[nz])
        return out

    delta = term(mass_win) - term(mass_all)
    order = np.argsort(np.abs(delta))[::-1][:top]
    deltas = [(int(clusters[i]), float(delta[i])) for i in order]
    members = {int(clusters[i]): [page_ids[j] for j in np.nonzero(labels == clusters[i])[0]]
               for i in order}
    return DropAttribution(time=t, depth=depth, cluster_deltas=deltas, members=members)


# ---------------------------------------------------------------------------
# geography

@dataclass
class CityEntropy:
    city: str
    n_pages: int
    entropy: float
    relative: float
    low_output: bool


def geo_relative_entropy(cities: list[str], labels: np.ndarray,
                         low_output_at: int = LOW_OUTPUT_PAGES) -> list[CityEntropy]:
    """Per-city cluster entropy minus its ln(N_c) ceiling; always <= 0."""
    labels = np.asarray(labels)
    if len(cities) != len(labels):
        raise DataError("cities and labels differ in length")
    out = []
    for city in sorted(set(cities)):
        mask = np.array([c == city for c in cities])
        n = int(mask.sum())
        h = shannon_entropy(labels[mask])
        out.append(CityEntropy(city=city, n_pages=n, entropy=h,
                               relative=h - math.log(n), low_output=n <= low_output_at))
    return out


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float,
                 radius_km: float = EARTH_RADIUS_KM) -> float:
    """Great-circle distance on a spherical Earth."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * radius_km * math.asin(min(1.0, math.sqrt(a)))


def load_gazetteer(path: str | None = None) -> dict[str, tuple[float, float]]:
    if path is None:
        path = os.path.join(os.path.dirname(__file__), "data", "gazetteer.csv")
    out: dict[str, tuple[float, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["city"]] = (float(row["lat"]), float(row["lon"]))
    if not out:
        raise DataError(f"empty gazetteer at {path}")
    return out


def city_coords(city: str, gazetteer: dict[str, tuple[float, float]]) -> tuple[float, float]:
    if city not in gazetteer:
        raise UnknownCityError(city)
    return gazetteer[city]


def kde_rate(years: np.ndarray, grid: np.ndarray,
             bandwidth: float = 0.2) -> np.ndarray:
    """Smoothed events-per-year rate over the grid.

    Density integrates to 1, so scaling by the event count gives a
    rate. A single event (or zero spread) falls back to one explicit
    Gaussian bump, where a data-covariance bandwidth is undefined.
    """
    years = np.asarray(years, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if years.size == 0:
        raise DataError("kde needs at least one event")
    if years.size == 1 or np.ptp(years) == 0.0:
        s = max(bandwidth, 0.25)
        dens = np.exp(-((grid - years.mean()) ** 2) / (2 * s * s)) / (s * math.sqrt(2 * math.pi))
        return dens * years.size
    kde = stats.gaussian_kde(years, bw_method=bandwidth)
    return kde(grid) * years.size


# ---------------------------------------------------------------------------
# spread chains

@dataclass
class ChainEdge:
    table_type: str
    src_book: str
    dst_book: str
    src_city: str
    dst_city: str
    src_year: int
    dst_year: int
    distance_km: float

    @property
    def dt_years(self) -> int:
        return self.dst_year - self.src_year


@dataclass
class SpreadChains:
    edges: list[ChainEdge] = field(default_factory=list)
    roots: list[tuple[str, str]] = field(default_factory=list)

    def speed_kmy(self) -> list[float]:
        return [e.distance_km / e.dt_years for e in self.edges if e.dt_years > 0]


def build_spread_chains(occurrences: list[TableOccurrence],
                        gazetteer: dict[str, tuple[float, float]],
                        mode: str = "earliest") -> SpreadChains:
    """Link each reprint of a table type to one earlier occurrence.

    mode 'earliest' attaches every reprint to the type's first
    appearance (hub-and-spoke); 'latest' attaches it to the most recent
    strictly earlier occurrence (stepping-stone chain). Each node gets
    at most one parent and parents always precede children in
    (year, book) order, so the result is a forest by construction.
    """
    if mode not in ("earliest", "latest"):
        raise DataError(f"unknown chain mode {mode!r}")
    chains = SpreadChains()
    by_type: dict[str, list[TableOccurrence]] = {}
    for occ in occurrences:
        by_type.setdefault(occ.table_type, []).append(occ)
    for tt in sorted(by_type):
        occs = sorted(by_type[tt], key=lambda o: (o.year, o.book_id))
        chains.roots.append((tt, occs[0].book_id))
        for i, occ in enumerate(occs[1:], start=1):
            earlier = [o for o in occs[:i] if o.year < occ.year]
            if not earlier:
                chains.roots.append((tt, occ.book_id))
                continue
            parent = earlier[0] if mode == "earliest" else earlier[-1]
            lat1, lon1 = city_coords(parent.city, gazetteer)
            lat2, lon2 = city_coords(occ.city, gazetteer)
            chains.edges.append(ChainEdge(
                table_type=tt, src_book=parent.book_id, dst_book=occ.book_id,
                src_city=parent.city, dst_city=occ.city,
                src_year=parent.year, dst_year=occ.year,
                distance_km=haversine_km(lat1, lon1, lat2, lon2)))
    return chains


def is_forest(chains: SpreadChains) -> bool:
    """True when no node has two parents and every edge moves forward in time."""
    seen_child: set[tuple[str, str]] = set()
    for e in chains.edges:
        child = (e.table_type, e.dst_book)
        if child in seen_child:
            return False
        seen_child.add(child)
        if e.dst_year <= e.src_year:
            return False
    root_set = {(tt, b) for tt, b in chains.roots}
    return not (root_set & seen_child)

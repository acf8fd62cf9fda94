"""Agreement between found-location category statistics and reference data."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CategoryMismatchError, EmptyInputError, MissingInputError
from .gis import LandCoverCategory

SMOOTHING = 1e-9

CATEGORIES = tuple(c.value for c in LandCoverCategory)

# Hiker (solo) land cover at find location; travel aid and linear feature
# are both counted as road.
HIKER_SOLO_REFERENCE = {
    "open_ground": 53,
    "road": 33 + 9,
    "building": 30,
    "trees": 4,
    "water": 1,
}


@dataclass(frozen=True)
class CategoryHistogram:
    counts: dict[str, float]

    def __post_init__(self):
        for k, v in self.counts.items():
            if v < 0:
                raise ValueError(f"negative count for {k}")

    @property
    def total(self) -> float:
        return float(sum(self.counts.values()))

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(self.counts)

    def vector(self, order=None) -> np.ndarray:
        order = self.categories if order is None else order
        return np.array([float(self.counts.get(c, 0.0)) for c in order])

    def percentages(self) -> dict[str, float]:
        t = self.total
        return {k: 100.0 * v / t for k, v in self.counts.items()}

    @classmethod
    def from_labels(cls, labels, categories=CATEGORIES) -> "CategoryHistogram":
        labels = np.asarray(labels)
        return cls({c: int(np.count_nonzero(labels == c)) for c in categories})


def _smoothed(v: np.ndarray) -> np.ndarray:
    p = v / v.sum()
    p = np.where(p == 0, SMOOTHING, p)
    return p / p.sum()


def skl_vectors(p, q) -> float:
    """Symmetric KL divergence of two non-negative weight vectors.

    Both are normalised, zero entries are replaced by a small epsilon and
    the vectors renormalised before evaluation.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("histograms must have the same number of bins")
    if p.sum() <= 0 or q.sum() <= 0:
        raise EmptyInputError("histogram has no mass")
    p, q = _smoothed(p), _smoothed(q)
    d = np.log(p) - np.log(q)
    return float(np.sum((p - q) * d))


def skl(p: CategoryHistogram, q: CategoryHistogram) -> float:
    if set(p.categories) != set(q.categories):
        raise CategoryMismatchError(f"category sets differ: {p.categories} vs {q.categories}")
    order = p.categories
    return skl_vectors(p.vector(order), q.vector(order))


def uniform_baseline(reference: CategoryHistogram) -> float:
    """SKL of a uniform distribution over the reference's categories."""
    return skl_vectors(np.ones(len(reference.categories)), reference.vector())


def compare_to_reference(found: CategoryHistogram, reference: CategoryHistogram) -> dict:
    """Per-category percentage-point differences and overall SKL."""
    if set(found.categories) != set(reference.categories):
        raise CategoryMismatchError(
            f"found categories {sorted(found.categories)} != reference {sorted(reference.categories)}"
        )
    if found.total <= 0 or reference.total <= 0:
        raise EmptyInputError("cannot compare an empty histogram")
    fp, rp = found.percentages(), reference.percentages()
    rows = []
    for c in reference.categories:
        rows.append({
            "category": c,
            "found_count": found.counts[c],
            "found_pct": fp[c],
            "reference_count": reference.counts[c],
            "reference_pct": rp[c],
            "diff_pp": fp[c] - rp[c],
            "abs_diff_pp": abs(fp[c] - rp[c]),
        })
    return {
        "rows": rows,
        "skl": skl(found, reference),
        "uniform_baseline_skl": uniform_baseline(reference),
        "found_total": found.total,
        "reference_total": reference.total,
    }


def load_reference(path) -> CategoryHistogram:
    """Read a ``category<TAB>count`` file (``#`` comments allowed)."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"reference histogram not found: {path}")
    counts = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, value = line.split()[:2]
        if name == "category":
            continue
        counts[name] = float(value)
    return CategoryHistogram(counts)


def write_report(report: dict, tsv_path, summary_path=None) -> None:
    fields = ["category", "found_count", "found_pct", "reference_count", "reference_pct",
              "diff_pp", "abs_diff_pp"]
    with open(tsv_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(fields)
        for r in report["rows"]:
            w.writerow([r[f] if isinstance(r[f], str) else repr(float(r[f])) for f in fields])
        w.writerow(["skl", repr(report["skl"])])
        w.writerow(["uniform_baseline_skl", repr(report["uniform_baseline_skl"])])
    if summary_path is not None:
        lines = [f"{'category':<12} {'found %':>9} {'ref %':>9} {'diff pp':>9}"]
        for r in report["rows"]:
            lines.append(f"{r['category']:<12} {r['found_pct']:9.2f} {r['reference_pct']:9.2f} "
                         f"{r['diff_pp']:+9.2f}")
        lines.append(f"SKL = {report['skl']:.4f} (uniform baseline {report['uniform_baseline_skl']:.4f})")
        lines.append(f"samples = {int(report['found_total'])}")
        Path(summary_path).write_text("\n".join(lines) + "\n")


def read_report(tsv_path) -> dict:
    rows, extra = [], {}
    with open(tsv_path) as fh:
        r = csv.reader(fh, delimiter="\t")
        header = next(r)
        for rec in r:
            if len(rec) == 2:
                extra[rec[0]] = float(rec[1])
            else:
                rows.append({k: (v if k == "category" else float(v)) for k, v in zip(header, rec)})
    return {"rows": rows, **extra}


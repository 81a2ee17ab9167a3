"""Distance and similarity measures between responses and keys."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateImageError
from .hashing import BitKey
from .token import SpeckleImage

__all__ = [
    "euclidean",
    "hamming",
    "fractional_hamming",
    "cross_correlation",
    "DistanceReport",
    "overlap",
]


def _as_values(x) -> np.ndarray:
    if isinstance(x, SpeckleImage):
        return x.as_float().ravel()
    if isinstance(x, BitKey):
        return x.bits.astype(np.float64)
    return np.asarray(x, dtype=np.float64).ravel()


def _as_bits(x) -> np.ndarray:
    if isinstance(x, BitKey):
        return x.bits
    arr = np.asarray(x, dtype=np.uint8).ravel()
    if np.any(arr > 1):
        raise ValueError("bit vector must be binary")
    return arr


def euclidean(a, b) -> float:
    """Plain L2 distance between two equal-size images or vectors."""
    va, vb = _as_values(a), _as_values(b)
    if va.size != vb.size:
        raise ValueError("size mismatch")
    return float(np.linalg.norm(va - vb))


def hamming(a, b) -> int:
    """Number of differing bits."""
    ba, bb = _as_bits(a), _as_bits(b)
    if ba.size != bb.size:
        raise ValueError("length mismatch")
    return int(np.count_nonzero(ba != bb))


def fractional_hamming(a, b) -> float:
    ba = _as_bits(a)
    return hamming(a, b) / ba.size


def cross_correlation(a, b) -> float:
    """Pearson correlation coefficient over paired samples."""
    va, vb = _as_values(a), _as_values(b)
    if va.size != vb.size:
        raise ValueError("size mismatch")
    va = va - va.mean()
    vb = vb - vb.mean()
    denom = np.sqrt((va * va).sum() * (vb * vb).sum())
    if denom == 0:
        raise DegenerateImageError("zero variance input, correlation undefined")
    return float((va * vb).sum() / denom)


@dataclass(frozen=True, eq=False)
class DistanceReport:
    """A sample of pairwise distances with its histogram."""

    kind: str
    metric: str
    values: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_values(cls, values, kind="", metric="", bins="auto") -> "DistanceReport":
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size == 0:
            raise ValueError("empty sample")
        edges = _fd_edges(values) if bins == "auto" else np.histogram_bin_edges(values, bins)
        counts, edges = np.histogram(values, bins=edges)
        return cls(kind, metric, values, edges, counts)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std())

    @property
    def count(self) -> int:
        return int(self.values.size)

    def to_tsv(self) -> str:
        out = io.StringIO()
        out.write(f"# kind={self.kind} metric={self.metric}\n")
        out.write(f"# count={self.count} mean={self.mean:.6g} std={self.std:.6g}\n")
        out.write("bin_lo\tbin_hi\tcount\n")
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            out.write(f"{lo:.6g}\t{hi:.6g}\t{int(c)}\n")
        return out.getvalue()

    def save_tsv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_tsv())


def _fd_edges(values: np.ndarray) -> np.ndarray:
    # Freedman-Diaconis, with a sane fallback for degenerate spreads
    edges = np.histogram_bin_edges(values, bins="fd")
    if edges.size < 2:
        edges = np.histogram_bin_edges(values, bins=1)
    return edges


def _fd_width(values: np.ndarray) -> float:
    edges = _fd_edges(values)
    return float(edges[1] - edges[0])


def overlap(report_a: DistanceReport, report_b: DistanceReport) -> float:
    """Overlap coefficient of two distance distributions.

    Sum over shared bins of min(p_a, p_b) with both histograms normalized to
    unit mass. When the stored binnings differ, both samples are re-binned on
    a common grid spanning the pooled range. The grid step is the finer of
    the two reports' own Freedman-Diaconis widths: a pooled-sample width is
    useless here, because for well-separated distributions the pooled IQR
    measures the gap between the clusters rather than either one's spread.
    """
    if report_a.count == 0 or report_b.count == 0:
        raise ValueError("cannot compute overlap of an empty report")
    if (
        report_a.bin_edges.size == report_b.bin_edges.size
        and np.allclose(report_a.bin_edges, report_b.bin_edges)
    ):
        edges = report_a.bin_edges
    else:
        lo = min(report_a.values.min(), report_b.values.min())
        hi = max(report_a.values.max(), report_b.values.max())
        width = min(_fd_width(report_a.values), _fd_width(report_b.values))
        if hi == lo:
            return 1.0
        # cap keeps pathological widths (near-constant samples) from
        # exploding the grid; 4096 bins resolve any distance data we emit
        nbins = int(np.clip(np.ceil((hi - lo) / width), 1, 4096))
        edges = np.linspace(lo, hi, nbins + 1)
    pa, _ = np.histogram(report_a.values, bins=edges)
    pb, _ = np.histogram(report_b.values, bins=edges)
    pa = pa / report_a.count
    pb = pb / report_b.count
    return float(np.minimum(pa, pb).sum())

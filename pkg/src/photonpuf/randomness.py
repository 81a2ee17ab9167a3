"""Random bit extraction from speckle and a frequentist test battery.

``extract_bits`` applies one fixed random binary mapping to a sequence of
speckle images and concatenates the per-image outputs in order, giving
device-derived bitstreams. The battery is the classic subset of eight
statistical tests used for desk-scale PRNG qualification: frequency, block
frequency, cumulative sums, runs, longest run of ones, spectral, approximate
entropy, and serial. Each returns the standard p-value(s); a suite report
aggregates many streams into pass proportions plus a p-value uniformity
check per test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, gammaincc, ndtr

from ._binio import le, pack_bits, unpack_bits
from .hashing import HashConfig, standardize

__all__ = [
    "BitStream",
    "extract_bits",
    "nist_test",
    "suite_report",
    "SuiteReport",
    "TestResult",
    "ALL_TESTS",
    "pvalue_uniformity",
]

ALL_TESTS = (
    "frequency",
    "block_frequency",
    "cumulative_sums",
    "runs",
    "longest_run",
    "fft",
    "approximate_entropy",
    "serial",
)

ALPHA = 0.01
UNIFORMITY_FLOOR = 1e-4


@dataclass(frozen=True, eq=False)
class BitStream:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(np.asarray(self.bits, dtype=np.uint8).ravel())
        if np.any(bits > 1):
            raise ValueError("stream must be binary")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return int(self.bits.size)

    def to_bytes(self) -> bytes:
        return le("I", self.n) + pack_bits(self.bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitStream":
        from ._binio import Reader, packed_size

        r = Reader(data)
        n = r.unpack("I")
        return cls(unpack_bits(r.take(packed_size(n)), n))


_TAG_EXTRACT = 0xEB17


def _as_pixels(image) -> np.ndarray:
    if hasattr(image, "as_float"):
        return image.as_float()
    return np.asarray(image, dtype=np.float64)


def extract_bits(images, cfg: HashConfig, bits_per_image: int | None = None) -> BitStream:
    """Sign-quantize random Fourier projections of each image and concatenate.

    One mapping (random pixel sign flips plus a random draw of projection
    bins) is derived from ``cfg.rng_seed`` and shared by every image, so the
    output is reproducible and order-stable. Unlike the keyed hash, bits here
    are the raw signs of the projections and the bins are drawn from the
    non-redundant half of the spectrum: the real part of an N-point transform
    of a real signal repeats between bins k and N-k, and a mean threshold
    couples all bits of an image, both of which bias the downstream
    statistics this stream feeds.
    """
    if cfg.algo != "rbm":
        raise ValueError("bit extraction uses the random binary mapping hash")
    images = list(images)
    if not images:
        raise ValueError("need at least one image")
    if bits_per_image is None:
        bits_per_image = cfg.key_len
    if not 1 <= bits_per_image <= cfg.key_len:
        raise ValueError(f"bits_per_image must be in 1..{cfg.key_len}")
    arr0 = _as_pixels(images[0])
    n = arr0.size
    half = n // 2 - 1  # distinct informative bins, DC and Nyquist excluded
    if cfg.key_len > half:
        raise ValueError(
            f"key_len {cfg.key_len} exceeds the {half} distinct bins of a {arr0.shape} image"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.rng_seed), _TAG_EXTRACT]))
    signs = rng.integers(0, 2, size=n, dtype=np.int8) * 2 - 1
    indices = 1 + rng.choice(half, size=cfg.key_len, replace=False)
    chunks = []
    for img in images:
        arr = _as_pixels(img)
        if arr.shape != arr0.shape:
            raise ValueError("all images must share one geometry")
        z = np.fft.fft(signs * standardize(arr).ravel())
        chunks.append((z.real[indices[:bits_per_image]] > 0.0).astype(np.uint8))
    return BitStream(np.concatenate(chunks))


# ----------------------------------------------------------------------
# individual tests

@dataclass(frozen=True)
class TestResult:
    name: str
    sub_results: tuple  # ((label, p_value), ...)

    @property
    def p_value(self) -> float:
        return min(p for _, p in self.sub_results)

    def passed(self, alpha: float = ALPHA) -> bool:
        return all(p >= alpha for _, p in self.sub_results)


def _bits(stream) -> np.ndarray:
    if isinstance(stream, BitStream):
        return stream.bits
    arr = np.asarray(stream, dtype=np.uint8).ravel()
    if np.any(arr > 1):
        raise ValueError("stream must be binary")
    return arr


def frequency(stream) -> TestResult:
    """Monobit test: the +-1 sum should be near zero."""
    b = _bits(stream)
    n = b.size
    if n < 100:
        raise ValueError("frequency test needs at least 100 bits")
    s = 2.0 * int(b.sum()) - n
    p = erfc(abs(s) / math.sqrt(n) / math.sqrt(2.0))
    return TestResult("frequency", (("frequency", float(p)),))


def block_frequency(stream, block_len: int | None = None) -> TestResult:
    b = _bits(stream)
    n = b.size
    if block_len is None:
        block_len = max(20, n // 64)
    n_blocks = n // block_len
    if n_blocks < 1:
        raise ValueError("stream shorter than one block")
    blocks = b[: n_blocks * block_len].reshape(n_blocks, block_len)
    pi = blocks.mean(axis=1)
    chi2 = 4.0 * block_len * float(((pi - 0.5) ** 2).sum())
    p = gammaincc(n_blocks / 2.0, chi2 / 2.0)
    return TestResult("block_frequency", (("block_frequency", float(p)),))


def _cusum_p(z: int, n: int) -> float:
    if z == 0:
        return 0.0
    sn = math.sqrt(n)
    k1 = np.arange(math.floor((-n / z + 1) / 4), math.floor((n / z - 1) / 4) + 1)
    k2 = np.arange(math.floor((-n / z - 3) / 4), math.floor((n / z - 1) / 4) + 1)
    t1 = (ndtr((4 * k1 + 1) * z / sn) - ndtr((4 * k1 - 1) * z / sn)).sum()
    t2 = (ndtr((4 * k2 + 3) * z / sn) - ndtr((4 * k2 + 1) * z / sn)).sum()
    return float(np.clip(1.0 - t1 + t2, 0.0, 1.0))


def cumulative_sums(stream) -> TestResult:
    """Random-walk excursions, scanned forward and backward."""
    b = _bits(stream)
    n = b.size
    if n < 100:
        raise ValueError("cumulative sums test needs at least 100 bits")
    x = 2.0 * b - 1.0
    z_fwd = int(np.abs(np.cumsum(x)).max())
    z_bwd = int(np.abs(np.cumsum(x[::-1])).max())
    return TestResult(
        "cumulative_sums",
        (
            ("cumulative_sums_forward", _cusum_p(z_fwd, n)),
            ("cumulative_sums_backward", _cusum_p(z_bwd, n)),
        ),
    )


def runs(stream) -> TestResult:
    b = _bits(stream)
    n = b.size
    if n < 100:
        raise ValueError("runs test needs at least 100 bits")
    pi = float(b.mean())
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return TestResult("runs", (("runs", 0.0),))
    v = 1 + int(np.count_nonzero(np.diff(b)))
    num = abs(v - 2.0 * n * pi * (1.0 - pi))
    den = 2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi)
    return TestResult("runs", (("runs", float(erfc(num / den)),),))


_LONGEST_RUN_TIERS = (
    # (min_n, block_len, categories, reference probabilities)
    (750000, 10000, (10, 11, 12, 13, 14, 15, 16),
     (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6272, 128, (4, 5, 6, 7, 8, 9),
     (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, (1, 2, 3, 4),
     (0.2148, 0.3672, 0.2305, 0.1875)),
)


def _longest_one_run(row: np.ndarray) -> int:
    padded = np.concatenate([[0], row, [0]]).astype(np.int8)
    change = np.diff(padded)
    starts = np.nonzero(change == 1)[0]
    if starts.size == 0:
        return 0
    ends = np.nonzero(change == -1)[0]
    return int((ends - starts).max())


def longest_run(stream) -> TestResult:
    b = _bits(stream)
    n = b.size
    if n < 128:
        raise ValueError("longest run test needs at least 128 bits")
    for min_n, block_len, cats, ref in _LONGEST_RUN_TIERS:
        if n >= min_n:
            break
    n_blocks = n // block_len
    blocks = b[: n_blocks * block_len].reshape(n_blocks, block_len)
    longest = np.array([_longest_one_run(row) for row in blocks])
    counts = np.zeros(len(cats), dtype=np.int64)
    counts[0] = int((longest <= cats[0]).sum())
    for i in range(1, len(cats) - 1):
        counts[i] = int((longest == cats[i]).sum())
    counts[-1] = int((longest >= cats[-1]).sum())
    expected = n_blocks * np.asarray(ref)
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    p = gammaincc((len(cats) - 1) / 2.0, chi2 / 2.0)
    return TestResult("longest_run", (("longest_run", float(p)),))


def fft_spectral(stream) -> TestResult:
    """Peak density below the 95% threshold of the half spectrum."""
    b = _bits(stream)
    n = b.size
    if n < 1000:
        raise ValueError("spectral test needs at least 1000 bits")
    x = 2.0 * b - 1.0
    mods = np.abs(np.fft.fft(x))[: n // 2]
    threshold = math.sqrt(math.log(1.0 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = int((mods < threshold).sum())
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    p = erfc(abs(d) / math.sqrt(2.0))
    return TestResult("fft", (("fft", float(p)),))


def _pattern_counts(b: np.ndarray, m: int) -> np.ndarray:
    """Counts of the 2^m overlapping m-bit patterns, cyclic wraparound."""
    n = b.size
    aug = np.concatenate([b, b[: m - 1]]) if m > 1 else b
    idx = np.zeros(n, dtype=np.int64)
    for j in range(m):
        idx |= aug[j : j + n].astype(np.int64) << j
    return np.bincount(idx, minlength=1 << m)


def approximate_entropy(stream, m: int = 4) -> TestResult:
    b = _bits(stream)
    n = b.size
    if n < 100:
        raise ValueError("approximate entropy test needs at least 100 bits")
    if not 1 <= m <= int(math.log2(n)) - 5:
        raise ValueError(f"block length m={m} too large for n={n}")

    def phi(mm: int) -> float:
        c = _pattern_counts(b, mm) / n
        c = c[c > 0]
        return float((c * np.log(c)).sum())

    apen = phi(m) - phi(m + 1)
    chi2 = 2.0 * n * (math.log(2.0) - apen)
    p = gammaincc(1 << (m - 1), chi2 / 2.0)
    return TestResult("approximate_entropy", (("approximate_entropy", float(p)),))


def serial(stream, m: int = 5) -> TestResult:
    b = _bits(stream)
    n = b.size
    if n < 100:
        raise ValueError("serial test needs at least 100 bits")
    if m < 3:
        raise ValueError("serial test needs m >= 3")

    def psi2(mm: int) -> float:
        if mm <= 0:
            return 0.0
        c = _pattern_counts(b, mm).astype(np.float64)
        return float((1 << mm) / n * (c * c).sum() - n)

    d1 = psi2(m) - psi2(m - 1)
    d2 = psi2(m) - 2.0 * psi2(m - 1) + psi2(m - 2)
    p1 = gammaincc(1 << (m - 2), d1 / 2.0)
    p2 = gammaincc(1 << (m - 3), d2 / 2.0)
    return TestResult("serial", (("serial_1", float(p1)), ("serial_2", float(p2))))


_TESTS = {
    "frequency": frequency,
    "block_frequency": block_frequency,
    "cumulative_sums": cumulative_sums,
    "runs": runs,
    "longest_run": longest_run,
    "fft": fft_spectral,
    "approximate_entropy": approximate_entropy,
    "serial": serial,
}


def nist_test(stream, name: str, **params) -> TestResult:
    """Run one named test; see ALL_TESTS for the battery."""
    if name not in _TESTS:
        raise ValueError(f"unknown test {name!r}, pick from {ALL_TESTS}")
    return _TESTS[name](stream, **params)


# ----------------------------------------------------------------------
# suite aggregation

def pvalue_uniformity(p_values) -> float:
    """Chi-square goodness of fit of p-values against uniform in 10 bins."""
    p_values = np.asarray(p_values, dtype=np.float64)
    s = p_values.size
    if s == 0:
        raise ValueError("no p-values")
    counts, _ = np.histogram(p_values, bins=10, range=(0.0, 1.0))
    expected = s / 10.0
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    return float(gammaincc(4.5, chi2 / 2.0))


@dataclass(frozen=True)
class SuiteRow:
    test: str
    proportion: float
    proportion_band: tuple
    proportion_ok: bool
    uniformity_p: float
    uniformity_ok: bool


@dataclass(frozen=True)
class SuiteReport:
    rows: tuple
    n_streams: int
    alpha: float

    @property
    def passed(self) -> bool:
        return all(r.proportion_ok and r.uniformity_ok for r in self.rows)

    def to_text(self) -> str:
        lines = [
            f"streams={self.n_streams} alpha={self.alpha}",
            f"{'test':<22}{'proportion':<12}{'band':<18}{'uniformity':<12}verdict",
        ]
        for r in self.rows:
            lo, hi = r.proportion_band
            verdict = "pass" if (r.proportion_ok and r.uniformity_ok) else "FAIL"
            lines.append(
                f"{r.test:<22}{r.proportion:<12.4f}[{lo:.4f}, {hi:.4f}]  "
                f"{r.uniformity_p:<12.6f}{verdict}"
            )
        return "\n".join(lines)


def suite_report(streams, tests=ALL_TESTS, alpha: float = ALPHA) -> SuiteReport:
    """Aggregate the battery over many streams.

    For every test the worst sub-part is reported: pass proportion with its
    three-sigma acceptance band, and the p-value uniformity statistic.
    """
    streams = list(streams)
    s = len(streams)
    if s < 2:
        raise ValueError("need at least two streams")
    per_part: dict[str, dict[str, list]] = {name: {} for name in tests}
    for stream in streams:
        for name in tests:
            result = nist_test(stream, name)
            for label, p in result.sub_results:
                per_part[name].setdefault(label, []).append(p)

    p_hat = 1.0 - alpha
    margin = 3.0 * math.sqrt(p_hat * alpha / s)
    band = (p_hat - margin, min(1.0, p_hat + margin))
    rows = []
    for name in tests:
        worst_prop, worst_unif = 1.0, 1.0
        for label, ps in per_part[name].items():
            ps_arr = np.asarray(ps)
            worst_prop = min(worst_prop, float((ps_arr >= alpha).mean()))
            worst_unif = min(worst_unif, pvalue_uniformity(ps_arr))
        rows.append(
            SuiteRow(
                test=name,
                proportion=worst_prop,
                proportion_band=band,
                proportion_ok=band[0] <= worst_prop <= band[1],
                uniformity_p=worst_unif,
                uniformity_ok=worst_unif >= UNIFORMITY_FLOOR,
            )
        )
    return SuiteReport(tuple(rows), s, alpha)

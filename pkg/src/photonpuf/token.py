"""Seeded speckle simulator standing in for a physical photonic token.

A token is a random complex transmission tensor: one complex field per
(challenge pixel, camera pixel) pair, drawn i.i.d. circular Gaussian from the
token seed. Illuminating a subset of challenge pixels superimposes the
corresponding rows coherently; the camera sees the squared magnitude. That
minimal model already produces fully developed speckle (exponential intensity
statistics) and exact field superposition between challenges.

Two readout degradations are modeled. Phase drift multiplies each
contribution by ``exp(j phi)`` with ``phi ~ N(0, sigma)`` before the coherent
sum, where ``sigma`` grows linearly with the thermal offset; additive camera
noise lands on the scaled intensity afterwards. Optional vibration jitter
occasionally translates the whole frame by roughly one resonant amplitude
in a random direction (sub-pixel offsets included).

Wavelength is a second challenge axis: the per-pixel field evolves with
wavelength as a stationary Gauss-Markov process, realized exactly on a
dyadic grid by seeded bridge bisection between knot tensors spaced at a
quarter of the decorrelation length. Any two responses along the axis then
have field correlation exactly exponential in their separation.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, replace

import numpy as np

from ._binio import Reader, le, pack_bits, packed_size, unpack_bits
from .errors import BadMagicError, FormatError, TruncatedError

__all__ = [
    "KINDS",
    "TUNING_RANGE_NM",
    "TokenModel",
    "PixelPattern",
    "Wavelength",
    "Challenge",
    "SpeckleImage",
    "NoiseParams",
    "new_token",
    "token_id",
    "respond",
    "wavelength_response",
    "pattern_field",
    "wavelength_field",
    "random_pattern",
    "challenge_to_bytes",
    "challenge_from_bytes",
    "token_to_bytes",
    "token_from_bytes",
    "save_token",
    "load_token",
    "save_pgm",
    "load_pgm",
]

KINDS = ("diffuser", "pof")
_KIND_CODE = {"diffuser": 0, "pof": 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}

# wavelength tuning window of the simulated source, nanometers
TUNING_RANGE_NM = (1540.0, 1570.0)

# default field decorrelation lengths along wavelength, picometers
DEFAULT_DECORRELATION_PM = {"diffuser": 2000.0, "pof": 120.0}

# default speckle grain radius (gaussian sigma, camera pixels)
DEFAULT_GRAIN_PX = 1.5

# intensity headroom: mean intensity maps to 1/4 of full scale
_HEADROOM = 4.0

_TAG_FIELD = 0x1A57
_TAG_WAVELENGTH = 0x57A4
_TAG_WL_BRIDGE = 0x5B1D6E
_TAG_NOISE = 0x401E

# dyadic subdivisions per knot interval; wavelength queries snap to this grid
_BRIDGE_STEPS = 1 << 10

_MAGIC_TOKEN = b"PUFT"
_TOKEN_VERSION = 1


# ----------------------------------------------------------------------
# data types

@dataclass(frozen=True, eq=False)
class PixelPattern:
    """Spatial challenge: binary on/off mask over the modulator grid."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.ascontiguousarray(np.asarray(self.mask, dtype=np.uint8))
        if mask.ndim != 2:
            raise ValueError("challenge mask must be 2-D")
        if np.any(mask > 1):
            raise ValueError("challenge mask must be binary")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def on_count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class Wavelength:
    """Spectral challenge: source wavelength in nanometers."""

    lambda_nm: float

    def __post_init__(self):
        lo, hi = TUNING_RANGE_NM
        if not lo <= self.lambda_nm <= hi:
            raise ValueError(
                f"wavelength {self.lambda_nm} nm outside tuning range {lo}..{hi} nm"
            )


Challenge = PixelPattern | Wavelength


@dataclass(frozen=True, eq=False)
class SpeckleImage:
    """Quantized camera frame."""

    pixels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("image must be 2-D")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self):
        return self.pixels.shape

    def as_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)


@dataclass(frozen=True)
class NoiseParams:
    """Readout noise configuration for a single capture.

    intensity_sigma is a fraction of full scale; phase_drift_sigma is in
    radians; delta_T (degrees C) adds ``drift_coeff * |delta_T|`` radians of
    extra phase spread. vibration models a resonant mechanical mode: with
    probability vibration_prob per capture the frame is translated by about
    vibration_amp pixels (within +-20%) in a uniformly random direction.
    noise_seed makes the capture reproducible; all-zero magnitudes give
    bit-exact deterministic output.
    """

    intensity_sigma: float = 0.01
    phase_drift_sigma: float = 0.085
    delta_T: float = 0.0
    drift_coeff: float = 0.2
    vibration_amp: float = 0.0
    vibration_prob: float = 0.0
    noise_seed: int = 0

    @classmethod
    def none(cls) -> "NoiseParams":
        return cls(intensity_sigma=0.0, phase_drift_sigma=0.0)

    def with_seed(self, noise_seed: int) -> "NoiseParams":
        return replace(self, noise_seed=noise_seed)

    @property
    def phase_sigma_total(self) -> float:
        return self.phase_drift_sigma + self.drift_coeff * abs(self.delta_T)


class TokenModel:
    """An instantiated token: seed, geometry and the realized field tensor.

    The tensor is fully determined by (token_seed, kind, grid_dims, out_dims);
    two constructions from the same parameters are identical. Instances are
    immutable apart from an internal wavelength-knot cache and safe to share
    across threads.
    """

    def __init__(self, token_seed, kind, grid_dims, out_dims,
                 wl_decorrelation_length, speckle_grain):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        if not (0 <= int(token_seed) < 2 ** 64):
            raise ValueError("token_seed must fit in 64 bits")
        grid_dims = (int(grid_dims[0]), int(grid_dims[1]))
        out_dims = (int(out_dims[0]), int(out_dims[1]))
        if min(grid_dims) < 1 or min(out_dims) < 1:
            raise ValueError("dimensions must be positive")
        if wl_decorrelation_length <= 0:
            raise ValueError("decorrelation length must be positive")
        if speckle_grain < 0:
            raise ValueError("speckle grain must be non-negative")
        self.token_seed = int(token_seed)
        self.kind = kind
        self.grid_dims = grid_dims
        self.out_dims = out_dims
        self.wl_decorrelation_length = float(wl_decorrelation_length)
        self.speckle_grain = float(speckle_grain)

        n_grid = grid_dims[0] * grid_dims[1]
        n_out = out_dims[0] * out_dims[1]
        rng = np.random.default_rng(
            np.random.SeedSequence(
                [self.token_seed, _KIND_CODE[kind], *grid_dims, *out_dims, _TAG_FIELD]
            )
        )
        self.field_tensor = (
            rng.standard_normal((n_grid, n_out)) + 1j * rng.standard_normal((n_grid, n_out))
        ) / np.sqrt(2.0)
        self.field_tensor.flags.writeable = False

        self._wl_lock = threading.Lock()
        self._wl_knots: dict[int, np.ndarray] = {}
        self._grain_kernel = None

    def __repr__(self):
        return (
            f"TokenModel(seed={self.token_seed}, kind={self.kind!r}, "
            f"grid={self.grid_dims}, out={self.out_dims})"
        )

    def __eq__(self, other):
        return isinstance(other, TokenModel) and self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(self.descriptor())

    def descriptor(self):
        return (
            self.token_seed,
            self.kind,
            self.grid_dims,
            self.out_dims,
            self.wl_decorrelation_length,
            self.speckle_grain,
        )

    # -- wavelength knot process ------------------------------------

    def _innovation(self, index: int) -> np.ndarray:
        n_out = self.out_dims[0] * self.out_dims[1]
        rng = np.random.default_rng(
            np.random.SeedSequence(
                [self.token_seed, _KIND_CODE[self.kind], *self.out_dims,
                 _TAG_WAVELENGTH, index]
            )
        )
        return (rng.standard_normal(n_out) + 1j * rng.standard_normal(n_out)) / np.sqrt(2.0)

    def _knot(self, index: int) -> np.ndarray:
        """Knot tensor K_index of the stationary AR(1) chain along wavelength."""
        rho = np.exp(-0.25)
        scale = np.sqrt(1.0 - rho * rho)
        with self._wl_lock:
            if index in self._wl_knots:
                return self._wl_knots[index]
            start = max((i for i in self._wl_knots if i <= index), default=None)
            if start is None:
                cur = self._innovation(0)
                self._wl_knots[0] = cur
                start = 0
            else:
                cur = self._wl_knots[start]
            for j in range(start + 1, index + 1):
                cur = rho * cur + scale * self._innovation(j)
            self._wl_knots[index] = cur
            if len(self._wl_knots) > 8:
                for i in sorted(self._wl_knots):
                    if i not in (0, index):
                        del self._wl_knots[i]
                        break
            return cur

    def _bridge_innovation(self, interval: int, depth: int, numerator: int) -> np.ndarray:
        n_out = self.out_dims[0] * self.out_dims[1]
        rng = np.random.default_rng(
            np.random.SeedSequence(
                [self.token_seed, _KIND_CODE[self.kind], *self.out_dims,
                 _TAG_WL_BRIDGE, interval, depth, numerator]
            )
        )
        return (rng.standard_normal(n_out) + 1j * rng.standard_normal(n_out)) / np.sqrt(2.0)

    def _bridge_point(self, interval: int, numerator: int) -> np.ndarray:
        """Field at dyadic position numerator/_BRIDGE_STEPS inside an interval.

        Bisects the knot interval, conditionally sampling each midpoint from
        its segment endpoints with a seeded residual. The Markov property
        makes the refinement exact: every finite set of dyadic positions
        carries exactly the exponential covariance, and revisiting a position
        reproduces the same field.
        """
        lo, hi = 0, _BRIDGE_STEPS
        e_lo, e_hi = self._knot(interval), self._knot(interval + 1)
        depth = 1
        while True:
            mid = (lo + hi) // 2
            # half-segment correlation; interval length is L/4, so a whole
            # segment of (hi - lo) steps spans 0.25 (hi - lo) / steps in
            # units of the decorrelation length
            rho = np.exp(-0.125 * (hi - lo) / _BRIDGE_STEPS)
            coef = rho / (1.0 + rho * rho)
            sigma = np.sqrt((1.0 - rho * rho) / (1.0 + rho * rho))
            e_mid = coef * (e_lo + e_hi) + sigma * self._bridge_innovation(
                interval, depth, mid)
            if mid == numerator:
                return e_mid
            if numerator < mid:
                hi, e_hi = mid, e_mid
            else:
                lo, e_lo = mid, e_mid
            depth += 1

    def _grain(self) -> np.ndarray | None:
        if self.speckle_grain <= 0:
            return None
        if self._grain_kernel is None:
            fy = np.fft.fftfreq(self.out_dims[0])
            fx = np.fft.fftfreq(self.out_dims[1])
            h = np.exp(
                -2.0 * np.pi ** 2 * self.speckle_grain ** 2
                * (fy[:, None] ** 2 + fx[None, :] ** 2)
            )
            self._grain_kernel = h / np.sqrt(np.mean(h ** 2))
        return self._grain_kernel


def new_token(token_seed, kind="diffuser", grid_dims=(16, 16), out_dims=(128, 128),
              wl_decorrelation_length=None, speckle_grain=DEFAULT_GRAIN_PX) -> TokenModel:
    """Instantiate a fresh token from a 64-bit seed.

    ``kind`` selects the wavelength sensitivity profile: "pof" (a few hundred
    picometers of decorrelation) or "diffuser" (a few nanometers). An explicit
    ``wl_decorrelation_length`` (picometers) overrides the kind default.
    """
    if wl_decorrelation_length is None:
        wl_decorrelation_length = DEFAULT_DECORRELATION_PM[kind] if kind in KINDS else 0
    return TokenModel(token_seed, kind, grid_dims, out_dims,
                      wl_decorrelation_length, speckle_grain)


def token_id(token: TokenModel) -> bytes:
    """Stable 16-byte identifier derived from the token descriptor."""
    return hashlib.sha256(token_to_bytes(token)).digest()[:16]


# ----------------------------------------------------------------------
# responses

def pattern_field(token: TokenModel, challenge: PixelPattern) -> np.ndarray:
    """Noise-free complex field at the camera for a spatial challenge.

    Pure superposition of the stored per-pixel fields; linear in the mask,
    so disjoint masks add: field(a | b) == field(a) + field(b).
    """
    mask = challenge.mask if isinstance(challenge, PixelPattern) else PixelPattern(challenge).mask
    if mask.shape != token.grid_dims:
        raise ValueError(f"mask shape {mask.shape} does not match grid {token.grid_dims}")
    flat = mask.ravel().astype(bool)
    if not flat.any():
        return np.zeros(token.out_dims, dtype=np.complex128)
    field = token.field_tensor[flat].sum(axis=0)
    return field.reshape(token.out_dims)


def wavelength_field(token: TokenModel, challenge: Wavelength) -> np.ndarray:
    """Noise-free complex field for a spectral challenge.

    The correlation between fields at two wavelengths decays as
    ``exp(-delta / wl_decorrelation_length)`` with delta in picometers.
    Wavelengths snap to a dyadic grid of the knot spacing over
    ``_BRIDGE_STEPS``, far below one picometer at the default lengths.
    """
    if not isinstance(challenge, Wavelength):
        challenge = Wavelength(float(challenge))
    spacing = token.wl_decorrelation_length / 4.0
    offset_pm = (challenge.lambda_nm - TUNING_RANGE_NM[0]) * 1000.0
    pos = offset_pm / spacing
    k = int(np.floor(pos))
    numerator = int(round((pos - k) * _BRIDGE_STEPS))
    if numerator == _BRIDGE_STEPS:
        k += 1
        numerator = 0
    if numerator == 0:
        field = token._knot(k)
    else:
        field = token._bridge_point(k, numerator)
    return field.reshape(token.out_dims)


def _translate(img: np.ndarray, dr: float, dc: float) -> np.ndarray:
    """Circularly translate a frame by a (possibly fractional) pixel offset.

    Implemented as a Fourier phase ramp, so sub-pixel offsets are exact and
    the intensity statistics stay stationary under the periodic convention
    already used for grain smoothing.
    """
    nr, nc = img.shape
    ramp_r = np.exp(-2j * np.pi * dr * np.fft.fftfreq(nr))
    ramp_c = np.exp(-2j * np.pi * dc * np.fft.fftfreq(nc))
    return np.fft.ifft2(np.fft.fft2(img) * np.outer(ramp_r, ramp_c)).real


def _capture(token: TokenModel, field: np.ndarray, mean_intensity: float,
             noise: NoiseParams, bit_depth: int, rng) -> SpeckleImage:
    """Shared back end: grain, intensity, additive noise, quantization."""
    kernel = token._grain()
    if kernel is not None:
        field = np.fft.ifft2(np.fft.fft2(field) * kernel)
    intensity = np.abs(field) ** 2
    qmax = (1 << bit_depth) - 1
    img = intensity * (qmax / (_HEADROOM * mean_intensity))
    if noise.vibration_prob > 0 and noise.vibration_amp > 0:
        if rng.random() < noise.vibration_prob:
            # mechanical resonance: an excited mount rings at a fixed
            # amplitude, so the excursion concentrates near the nominal
            # value (+-20% hard limit) with a uniformly random direction
            amp = noise.vibration_amp * float(np.clip(rng.normal(1.0, 0.1), 0.8, 1.2))
            theta = rng.uniform(0.0, 2.0 * np.pi)
            img = _translate(img, amp * np.sin(theta), amp * np.cos(theta))
    if noise.intensity_sigma > 0:
        img = img + rng.normal(0.0, noise.intensity_sigma * qmax, size=img.shape)
    px = np.clip(np.floor(img + 0.5), 0, qmax)
    dtype = np.uint8 if bit_depth <= 8 else np.uint16
    return SpeckleImage(px.astype(dtype), bit_depth=bit_depth)


def _noise_rng(noise: NoiseParams):
    return np.random.default_rng(np.random.SeedSequence([_TAG_NOISE, noise.noise_seed]))


def respond(token: TokenModel, challenge, noise: NoiseParams | None = None,
            bit_depth: int = 8) -> SpeckleImage:
    """Capture the speckle image for a spatial challenge.

    Identical inputs (including noise_seed) give bit-identical images; with
    all noise magnitudes zero the capture is a pure function of token and
    challenge.
    """
    if isinstance(challenge, Wavelength):
        return wavelength_response(token, challenge, noise, bit_depth)
    if not isinstance(challenge, PixelPattern):
        challenge = PixelPattern(np.asarray(challenge))
    if noise is None:
        noise = NoiseParams.none()
    if not 1 <= bit_depth <= 16:
        raise ValueError("bit_depth must be in 1..16")
    if challenge.mask.shape != token.grid_dims:
        raise ValueError(
            f"mask shape {challenge.mask.shape} does not match grid {token.grid_dims}"
        )
    rng = _noise_rng(noise)
    flat = challenge.mask.ravel().astype(bool)
    n_on = int(flat.sum())
    sigma_phi = noise.phase_sigma_total
    if n_on == 0:
        field = np.zeros(token.out_dims, dtype=np.complex128)
    else:
        rows = token.field_tensor[flat]
        if sigma_phi > 0:
            phases = rng.normal(0.0, sigma_phi, size=rows.shape)
            field = (rows * np.exp(1j * phases)).sum(axis=0)
        else:
            field = rows.sum(axis=0)
        field = field.reshape(token.out_dims)
    return _capture(token, field, max(n_on, 1), noise, bit_depth, rng)


def wavelength_response(token: TokenModel, challenge: Wavelength,
                        noise: NoiseParams | None = None, bit_depth: int = 8) -> SpeckleImage:
    """Capture the speckle image for a spectral challenge."""
    if noise is None:
        noise = NoiseParams.none()
    if not isinstance(challenge, Wavelength):
        challenge = Wavelength(float(challenge))
    if not 1 <= bit_depth <= 16:
        raise ValueError("bit_depth must be in 1..16")
    rng = _noise_rng(noise)
    field = wavelength_field(token, challenge)
    sigma_phi = noise.phase_sigma_total
    if sigma_phi > 0:
        field = field * np.exp(1j * rng.normal(0.0, sigma_phi, size=field.shape))
    return _capture(token, field, 1.0, noise, bit_depth, rng)


def random_pattern(grid_dims, rng_seed, on_fraction=0.5) -> PixelPattern:
    """Pseudo-random spatial challenge with the given expected on fraction."""
    if not 0.0 <= on_fraction <= 1.0:
        raise ValueError("on_fraction must be in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 0xC4A1]))
    mask = (rng.random(tuple(grid_dims)) < on_fraction).astype(np.uint8)
    return PixelPattern(mask)


# ----------------------------------------------------------------------
# serialization

def token_to_bytes(token: TokenModel) -> bytes:
    return b"".join(
        [
            _MAGIC_TOKEN,
            le("H", _TOKEN_VERSION),
            le("B", _KIND_CODE[token.kind]),
            le("Q", token.token_seed),
            le("IIII", *token.grid_dims, *token.out_dims),
            le("d", token.wl_decorrelation_length),
            le("d", token.speckle_grain),
        ]
    )


def token_from_bytes(data: bytes) -> TokenModel:
    r = Reader(data)
    r.expect_magic(_MAGIC_TOKEN, "token")
    r.expect_version(_TOKEN_VERSION, "token")
    kind_code = r.unpack("B")
    if kind_code not in _KIND_NAME:
        raise FormatError(f"unknown token kind code {kind_code}")
    seed = r.unpack("Q")
    gr, gc, n1, n2 = r.unpack("IIII")
    decorr = r.unpack("d")
    grain = r.unpack("d")
    return TokenModel(seed, _KIND_NAME[kind_code], (gr, gc), (n1, n2), decorr, grain)


def save_token(token: TokenModel, path):
    with open(path, "wb") as fh:
        fh.write(token_to_bytes(token))


def load_token(path) -> TokenModel:
    with open(path, "rb") as fh:
        return token_from_bytes(fh.read())


_CHALLENGE_PIXEL = 0
_CHALLENGE_WAVELENGTH = 1
_CHALLENGE_NONE = 2


def challenge_to_bytes(challenge: Challenge | None) -> bytes:
    if challenge is None:
        return le("B", _CHALLENGE_NONE)
    if isinstance(challenge, PixelPattern):
        rows, cols = challenge.mask.shape
        return b"".join(
            [le("B", _CHALLENGE_PIXEL), le("II", rows, cols), pack_bits(challenge.mask)]
        )
    if isinstance(challenge, Wavelength):
        return le("B", _CHALLENGE_WAVELENGTH) + le("d", challenge.lambda_nm)
    raise TypeError(f"not a challenge: {challenge!r}")


def challenge_from_bytes(data: bytes) -> Challenge | None:
    r = Reader(data)
    tag = r.unpack("B")
    if tag == _CHALLENGE_PIXEL:
        rows, cols = r.unpack("II")
        bits = unpack_bits(r.take(packed_size(rows * cols)), rows * cols)
        return PixelPattern(bits.reshape(rows, cols))
    if tag == _CHALLENGE_WAVELENGTH:
        return Wavelength(r.unpack("d"))
    if tag == _CHALLENGE_NONE:
        return None
    raise FormatError(f"unknown challenge tag {tag}")


# ----------------------------------------------------------------------
# PGM import/export (binary P5, single byte samples)

def save_pgm(image: SpeckleImage | np.ndarray, path):
    px = image.pixels if isinstance(image, SpeckleImage) else np.asarray(image)
    if isinstance(image, SpeckleImage) and image.bit_depth > 8:
        raise ValueError("PGM export supports bit depths up to 8")
    if px.ndim != 2 or px.dtype != np.uint8:
        raise ValueError("PGM export needs a 2-D uint8 image")
    rows, cols = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def _pgm_tokens(data: bytes):
    """Header tokenizer: whitespace separated, # starts a comment line."""
    i = 0
    while True:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise TruncatedError("PGM header ended early")
        yield data[start:i], i


def load_pgm(path) -> SpeckleImage:
    with open(path, "rb") as fh:
        data = fh.read()
    toks = _pgm_tokens(data)
    magic, _ = next(toks)
    if magic != b"P5":
        raise BadMagicError(f"not a binary PGM file (magic {magic!r})")
    (cols, _), (rows, _), (maxval, end) = (next(toks) for _ in range(3))
    cols, rows, maxval = int(cols), int(rows), int(maxval)
    if not 0 < maxval <= 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    start = end + 1  # single whitespace byte after maxval
    raw = data[start : start + rows * cols]
    if len(raw) < rows * cols:
        raise TruncatedError("PGM pixel data truncated")
    px = np.frombuffer(raw, dtype=np.uint8).reshape(rows, cols).copy()
    return SpeckleImage(px, bit_depth=8)

"""Binary BCH error-correcting codes over GF(2^m).

The codec is self-contained: GF(2)[x] arithmetic on python ints, log/antilog
field tables, generator construction from minimal polynomials, systematic
encoding, and syndrome decoding (Berlekamp-Massey plus Chien search). Long
codes route the syndrome and root-search loops through numpy; short codes use
a plain-int fast path so exhaustive sweeps stay cheap.

Decode failure is a value (``None``), not an exception: callers in the
authentication path treat it as a rejection, never as a crash.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ._binio import Reader, le, pack_bits, packed_size, unpack_bits

__all__ = [
    "BchParams",
    "bch_new",
    "encode",
    "decode",
    "params_to_bytes",
    "params_from_bytes",
    "save_params",
    "load_params",
    "least_primitive_poly",
]

_MAGIC = b"PUFB"

# numpy loops win over int loops once the code is longer than a machine word
_VECTOR_MIN_LEN = 64


# ----------------------------------------------------------------------
# polynomials over GF(2), encoded as python ints (bit i = coefficient of x^i)

def _deg(p: int) -> int:
    return p.bit_length() - 1


def _pmul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        b >>= 1
    return r


def _pmod(a: int, b: int) -> int:
    db = _deg(b)
    da = _deg(a)
    while da >= db:
        a ^= b << (da - db)
        da = _deg(a)
    return a


def _ppowmod(a: int, e: int, mod: int) -> int:
    r = 1
    a = _pmod(a, mod)
    while e:
        if e & 1:
            r = _pmod(_pmul(r, a), mod)
        a = _pmod(_pmul(a, a), mod)
        e >>= 1
    return r


def _is_irreducible(f: int, m: int) -> bool:
    if not f & 1:  # x divides
        return False
    for d in range(1, m // 2 + 1):
        for q in range(1 << d, 1 << (d + 1)):
            if _pmod(f, q) == 0:
                return False
    return True


def _prime_factors(n: int):
    out = []
    d = 2
    while d * d <= n:
        if n % d == 0:
            out.append(d)
            while n % d == 0:
                n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


@lru_cache(maxsize=None)
def least_primitive_poly(m: int) -> int:
    """Smallest (as integer encoding) primitive polynomial of degree m."""
    n = (1 << m) - 1
    factors = _prime_factors(n)
    for f in range((1 << m) | 1, 1 << (m + 1), 2):
        if not _is_irreducible(f, m):
            continue
        # x is primitive mod f iff its order is exactly 2^m - 1
        if all(_ppowmod(2, n // p, f) != 1 for p in factors):
            return f
    raise AssertionError(f"no primitive polynomial of degree {m}")


# ----------------------------------------------------------------------
# GF(2^m) field tables

class _Field:
    def __init__(self, m: int, prim_poly: int):
        self.m = m
        self.n = (1 << m) - 1
        self.prim_poly = prim_poly
        exp = [0] * (2 * self.n)
        log = [0] * (self.n + 1)
        x = 1
        for i in range(self.n):
            exp[i] = x
            log[x] = i
            x <<= 1
            if x >> m:
                x ^= prim_poly
        if x != 1:
            raise ValueError(f"0x{prim_poly:x} is not primitive for m={m}")
        for i in range(self.n):
            exp[self.n + i] = exp[i]
        log[0] = -1
        self.exp = exp          # python list, scalar fast path
        self.log = log
        self.exp_np = np.array(exp, dtype=np.int64)
        self.log_np = np.array(log, dtype=np.int64)

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self.exp[self.log[a] + self.log[b]]

    def alpha_pow(self, e: int) -> int:
        return self.exp[e % self.n]


def _cyclotomic_coset(i: int, n: int):
    coset = []
    c = i % n
    while c not in coset:
        coset.append(c)
        c = (c * 2) % n
    return coset


def _minimal_poly(field: _Field, i: int) -> int:
    """Minimal polynomial over GF(2) of alpha^i, as an int encoding."""
    coeffs = [1]  # product of (x + alpha^c), coefficients live in GF(2^m)
    for c in _cyclotomic_coset(i, field.n):
        root = field.alpha_pow(c)
        nxt = [0] * (len(coeffs) + 1)
        for k, a in enumerate(coeffs):
            nxt[k + 1] ^= a
            nxt[k] ^= field.mul(a, root)
        coeffs = nxt
    out = 0
    for k, a in enumerate(coeffs):
        if a not in (0, 1):
            raise AssertionError("minimal polynomial has non-binary coefficient")
        out |= a << k
    return out


# ----------------------------------------------------------------------
# code construction

class BchParams:
    """A constructed binary BCH code.

    Attributes
    ----------
    m : int
        Field extension degree; code length is ``n = 2**m - 1``.
    n : int
        Code length in bits.
    k : int
        Message length in bits.
    t : int
        Guaranteed correction capability (design distance ``d = 2 t + 1``).
    generator_poly : int
        Generator polynomial, bit i = coefficient of x^i.
    primitive_poly : int
        Primitive polynomial defining the field representation.
    """

    def __init__(self, m: int, t: int, primitive_poly: int, generator_poly: int):
        self.m = m
        self.t = t
        self.d = 2 * t + 1
        self.n = (1 << m) - 1
        self.primitive_poly = primitive_poly
        self.generator_poly = generator_poly
        self.k = self.n - _deg(generator_poly)
        if self.k <= 0:
            raise ValueError(f"BCH(m={m}, t={t}) has no message bits")
        self._field = _Field(m, primitive_poly)
        # degrees 0..n-1 for vectorized syndrome evaluation
        self._degrees = np.arange(self.n, dtype=np.int64)

    def __repr__(self):
        return f"BchParams(n={self.n}, k={self.k}, t={self.t})"

    def __eq__(self, other):
        return (
            isinstance(other, BchParams)
            and (self.m, self.t, self.primitive_poly, self.generator_poly)
            == (other.m, other.t, other.primitive_poly, other.generator_poly)
        )

    def __hash__(self):
        return hash((self.m, self.t, self.primitive_poly, self.generator_poly))


def bch_new(m: int, t: int, primitive_poly: int | None = None) -> BchParams:
    """Construct the narrow-sense binary BCH code of length 2^m - 1.

    The generator is the least common multiple of the minimal polynomials of
    alpha, alpha^3, ..., alpha^(2t-1). Raises ``ValueError`` when the
    requested correction capability leaves no message bits.
    """
    if not 3 <= m <= 10:
        raise ValueError(f"m={m} outside supported range [3, 10]")
    if t < 1:
        raise ValueError(f"t={t} must be at least 1")
    if primitive_poly is None:
        primitive_poly = least_primitive_poly(m)
    field = _Field(m, primitive_poly)
    gen = 1
    covered: set[int] = set()
    for i in range(1, 2 * t, 2):
        if i % field.n in covered:
            continue
        coset = _cyclotomic_coset(i, field.n)
        covered.update(coset)
        gen = _pmul(gen, _minimal_poly(field, i))
    params = BchParams(m, t, primitive_poly, gen)
    # generator must divide x^n - 1, otherwise the construction is broken
    if _pmod((1 << params.n) | 1, gen) != 0:
        raise AssertionError("generator does not divide x^n - 1")
    return params


# ----------------------------------------------------------------------
# encode / decode

def _bits_to_poly(bits: np.ndarray) -> int:
    # bits[0] is the highest-degree coefficient
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def _poly_to_bits(p: int, width: int) -> np.ndarray:
    out = np.zeros(width, dtype=np.uint8)
    for i in range(width):
        out[i] = (p >> (width - 1 - i)) & 1
    return out


def encode(params: BchParams, secret) -> np.ndarray:
    """Systematically encode ``k`` secret bits into an ``n``-bit codeword.

    The codeword starts with the message bits, followed by the parity bits.
    """
    secret = np.asarray(secret, dtype=np.uint8).ravel()
    if secret.size != params.k:
        raise ValueError(f"secret must be {params.k} bits, got {secret.size}")
    if np.any(secret > 1):
        raise ValueError("secret must be binary")
    shifted = _bits_to_poly(secret) << (params.n - params.k)
    codeword = shifted ^ _pmod(shifted, params.generator_poly)
    return _poly_to_bits(codeword, params.n)


def _syndromes_int(params: BchParams, word: int):
    """Power-sum syndromes S_1..S_2t of a received word (int encoding)."""
    field = params._field
    exp, n = field.exp, field.n
    s = [0] * (2 * params.t)
    w = word
    while w:
        low = w & -w
        d = low.bit_length() - 1  # degree of this set bit
        w ^= low
        for j in range(2 * params.t):
            s[j] ^= exp[((j + 1) * d) % n]
    return s


def _syndromes_np(params: BchParams, degrees: np.ndarray):
    field = params._field
    n = field.n
    s = [0] * (2 * params.t)
    if degrees.size == 0:
        return s
    for j in range(2 * params.t):
        vals = field.exp_np[(j + 1) * degrees % n]
        s[j] = int(np.bitwise_xor.reduce(vals))
    return s


def _berlekamp_massey(params: BchParams, synd):
    """Shortest LFSR (error locator) generating the syndrome sequence."""
    field = params._field
    exp, log, n = field.exp, field.log, field.n
    c = [1]
    b = [1]
    L = 0
    shift = 1
    bb = 1
    for r in range(len(synd)):
        d = synd[r]
        for i in range(1, min(L, len(c) - 1) + 1):
            ci = c[i]
            si = synd[r - i]
            if ci and si:
                d ^= exp[log[ci] + log[si]]
        if d == 0:
            shift += 1
            continue
        coef_log = (log[d] - log[bb]) % n
        prev = c.copy()
        need = len(b) + shift
        if len(c) < need:
            c.extend([0] * (need - len(c)))
        for i, bi in enumerate(b):
            if bi:
                c[i + shift] ^= exp[(coef_log + log[bi]) % n]
        if 2 * L <= r:
            L = r + 1 - L
            b = prev
            bb = d
            shift = 1
        else:
            shift += 1
    while len(c) > 1 and c[-1] == 0:
        c.pop()
    return c, L


def _chien_int(params: BchParams, locator):
    """Roots of the locator by exhaustive evaluation; returns error degrees."""
    field = params._field
    exp, log, n = field.exp, field.log, field.n
    terms = list(locator)
    steps = [log[cj] if cj else -1 for cj in locator]
    degrees = []
    for i in range(n):
        v = 0
        for t in terms:
            v ^= t
        if v == 0:
            degrees.append((n - i) % n)
        for j in range(1, len(terms)):
            if terms[j]:
                terms[j] = exp[log[terms[j]] + j]
    return degrees


def _chien_np(params: BchParams, locator):
    field = params._field
    n = field.n
    idx = np.arange(n, dtype=np.int64)
    acc = np.zeros(n, dtype=np.int64)
    for j, cj in enumerate(locator):
        if cj:
            acc ^= field.exp_np[(field.log[cj] + j * idx) % n]
    roots = np.nonzero(acc == 0)[0]
    return [int((n - i) % n) for i in roots]


def decode(params: BchParams, noisy) -> tuple[np.ndarray, int] | None:
    """Correct up to ``t`` bit errors and return ``(secret, n_corrected)``.

    Returns ``None`` when the error pattern is unlocatable. Words further
    than ``t`` from every codeword either fail this way or land on a wrong
    codeword; within distance ``t`` the original message is always returned.
    """
    noisy = np.asarray(noisy, dtype=np.uint8).ravel()
    if noisy.size != params.n:
        raise ValueError(f"received word must be {params.n} bits, got {noisy.size}")
    if np.any(noisy > 1):
        raise ValueError("received word must be binary")

    vector = params.n >= _VECTOR_MIN_LEN
    if vector:
        degrees = (params.n - 1 - np.nonzero(noisy)[0]).astype(np.int64)
        synd = _syndromes_np(params, degrees)
    else:
        word = _bits_to_poly(noisy)
        synd = _syndromes_int(params, word)

    if not any(synd):
        return noisy[: params.k].copy(), 0

    locator, n_err = _berlekamp_massey(params, synd)
    if n_err > params.t or _deg_list(locator) != n_err:
        return None
    error_degrees = _chien_np(params, locator) if vector else _chien_int(params, locator)
    if len(error_degrees) != n_err:
        return None

    corrected = noisy.copy()
    for d in error_degrees:
        corrected[params.n - 1 - d] ^= 1
    if vector:
        # cheap consistency check on the long path
        degrees = (params.n - 1 - np.nonzero(corrected)[0]).astype(np.int64)
        if any(_syndromes_np(params, degrees)):
            return None
    return corrected[: params.k], n_err


def _deg_list(coeffs) -> int:
    d = len(coeffs) - 1
    while d > 0 and coeffs[d] == 0:
        d -= 1
    return d


# ----------------------------------------------------------------------
# serialization ("PUFB", little-endian)

_VERSION = 1


def params_to_bytes(params: BchParams) -> bytes:
    gen_bits = np.array(
        [(params.generator_poly >> i) & 1 for i in range(_deg(params.generator_poly) + 1)],
        dtype=np.uint8,
    )
    return b"".join(
        [
            _MAGIC,
            le("H", _VERSION),
            le("B", params.m),
            le("H", params.t),
            le("I", params.primitive_poly),
            le("I", gen_bits.size),
            pack_bits(gen_bits),
        ]
    )


def params_from_bytes(data: bytes) -> BchParams:
    r = Reader(data)
    r.expect_magic(_MAGIC, "BCH parameter")
    r.expect_version(_VERSION, "BCH parameter")
    m = r.unpack("B")
    t = r.unpack("H")
    prim = r.unpack("I")
    n_bits = r.unpack("I")
    bits = unpack_bits(r.take(packed_size(n_bits)), n_bits)
    gen = 0
    for i, b in enumerate(bits):
        gen |= int(b) << i
    params = bch_new(m, t, primitive_poly=prim)
    if params.generator_poly != gen:
        raise ValueError("stored generator does not match construction")
    return params


def save_params(params: BchParams, path):
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def load_params(path) -> BchParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())

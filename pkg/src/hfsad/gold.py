"""Gold code families built from preferred pairs of m-sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Primitive trinomials x^n + x^k + 1, stored as the exponent set {n, k}.
PRIMITIVE_TAPS = {
    3: (3, 1),
    5: (5, 2),
    7: (7, 1),
    9: (9, 4),
    11: (11, 2),
}


def lfsr_sequence(taps, length: int) -> np.ndarray:
    """Binary output of a Fibonacci LFSR for polynomial ``x^n + sum x^k + 1``.

    ``taps`` holds the nonzero exponents other than the constant term, with
    the degree first or anywhere.  The register starts at all ones.
    """
    taps = sorted(set(int(t) for t in taps))
    n = taps[-1]
    lower = [t for t in taps if t != n]
    seq = np.empty(length, dtype=np.uint8)
    seq[: min(n, length)] = 1
    for k in range(length - n):
        bit = seq[k]
        for t in lower:
            bit ^= seq[k + t]
        seq[k + n] = bit
    return seq


def berlekamp_massey(bits) -> list[int]:
    """Shortest LFSR (over GF(2)) generating ``bits``.

    Returns the feedback polynomial as its nonzero exponents, highest first,
    excluding the constant term, i.e. the same convention as ``PRIMITIVE_TAPS``.
    """
    s = [int(b) & 1 for b in bits]
    c, b = [1], [1]
    L, m = 0, 1
    for n in range(len(s)):
        d = s[n]
        for i in range(1, L + 1):
            d ^= c[i] & s[n - i]
        if d == 0:
            m += 1
            continue
        t = list(c)
        shifted = [0] * m + b
        if len(shifted) > len(c):
            c = c + [0] * (len(shifted) - len(c))
        for i, v in enumerate(shifted):
            c[i] ^= v
        if 2 * L <= n:
            L, b, m = n + 1 - L, t, 1
        else:
            m += 1
    c = c + [0] * (L + 1 - len(c))
    # connection polynomial C(x) = 1 + c1 x + ... + cL x^L; the recurrence
    # polynomial is its reciprocal x^L C(1/x).
    exps = [L - i for i in range(1, L + 1) if c[i]]
    exps = [e for e in exps if e != 0]
    return sorted({L, *exps}, reverse=True)


def to_bipolar(bits: np.ndarray) -> np.ndarray:
    """Map 0 -> +1, 1 -> -1 so that XOR becomes multiplication."""
    return 1 - 2 * np.asarray(bits, dtype=np.int8)


def periodic_xcorr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Periodic cross-correlation ``r[k] = sum_i a[i] b[(i+k) mod N]``."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return np.array([int(np.dot(a, np.roll(b, -k))) for k in range(a.size)])


def correlation_values(degree: int) -> set[int]:
    t = 2 ** ((degree + 1) // 2)
    return {-1, -(t + 1), t - 1}


@dataclass(frozen=True)
class GoldCodeFamily:
    degree: int
    preferred_pair_taps: tuple[tuple[int, ...], tuple[int, ...]]
    codes: np.ndarray  # (2^n + 1) x (2^n - 1), entries +-1

    @property
    def length(self) -> int:
        return self.codes.shape[1]

    def __len__(self):
        return self.codes.shape[0]

    def __getitem__(self, idx) -> np.ndarray:
        return self.codes[idx]


def gen_gold_family(degree: int = 5) -> GoldCodeFamily:
    """All ``2^n + 1`` Gold codes of length ``2^n - 1`` for odd ``n`` in 3..11.

    The second sequence of the preferred pair is the first decimated by 3
    (``2^k + 1`` with ``k = 1``), which yields three-valued cross-correlation
    for every odd degree.
    """
    degree = int(degree)
    if degree % 2 == 0:
        raise ValueError(f"degree {degree} is even; the three-valued bound needs odd degree")
    if degree not in PRIMITIVE_TAPS:
        raise ValueError(f"degree must be odd and within 3..11, got {degree}")
    n_len = 2 ** degree - 1
    u = lfsr_sequence(PRIMITIVE_TAPS[degree], n_len)
    v = u[(3 * np.arange(n_len)) % n_len]
    v_taps = tuple(berlekamp_massey(np.concatenate([v, v])))
    codes = [u, v] + [u ^ np.roll(v, -k) for k in range(n_len)]
    return GoldCodeFamily(
        degree=degree,
        preferred_pair_taps=(tuple(sorted(PRIMITIVE_TAPS[degree], reverse=True)), v_taps),
        codes=to_bipolar(np.array(codes)),
    )

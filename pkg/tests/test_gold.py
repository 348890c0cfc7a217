import itertools

import numpy as np
import pytest

from hfsad.gold import (PRIMITIVE_TAPS, berlekamp_massey, correlation_values, gen_gold_family,
                        lfsr_sequence, periodic_xcorr, to_bipolar)


def brute_xcorr(a, b):
    n = len(a)
    return [sum(int(a[i]) * int(b[(i + k) % n]) for i in range(n)) for k in range(n)]


class TestLfsr:
    @pytest.mark.parametrize("degree", sorted(PRIMITIVE_TAPS))
    def test_maximal_period(self, degree):
        n = 2 ** degree - 1
        seq = lfsr_sequence(PRIMITIVE_TAPS[degree], 2 * n)
        assert np.array_equal(seq[:n], seq[n:])
        assert all(not np.array_equal(seq[:n], np.roll(seq[:n], k)) for k in range(1, n))

    @pytest.mark.parametrize("degree", sorted(PRIMITIVE_TAPS))
    def test_balance(self, degree):
        n = 2 ** degree - 1
        assert lfsr_sequence(PRIMITIVE_TAPS[degree], n).sum() == 2 ** (degree - 1)

    def test_autocorrelation_two_valued(self):
        b = to_bipolar(lfsr_sequence(PRIMITIVE_TAPS[5], 31))
        r = periodic_xcorr(b, b)
        assert r[0] == 31
        assert set(r[1:]) == {-1}

    def test_berlekamp_massey_recovers_taps(self):
        seq = lfsr_sequence(PRIMITIVE_TAPS[7], 254)
        assert berlekamp_massey(seq) == sorted(PRIMITIVE_TAPS[7], reverse=True)


class TestGoldFamily:
    def test_size_and_length(self):
        fam = gen_gold_family(5)
        assert len(fam) == 33
        assert fam.length == 31
        assert set(np.unique(fam.codes)) == {-1, 1}

    def test_xcorr_matches_brute_force(self):
        fam = gen_gold_family(5)
        assert list(periodic_xcorr(fam[3], fam[7])) == brute_xcorr(fam[3], fam[7])

    def test_three_valued_brute_force(self):
        fam = gen_gold_family(5)
        seen = set()
        for i, j in itertools.combinations(range(len(fam)), 2):
            seen.update(brute_xcorr(fam[i], fam[j]))
        assert seen == {7, -9, -1}
        assert seen == correlation_values(5)

    @pytest.mark.parametrize("degree", [3, 7])
    def test_other_odd_degrees(self, degree):
        fam = gen_gold_family(degree)
        f = np.fft.fft(fam.codes.astype(float), axis=1)
        # all periodic cross-correlations at once via the correlation theorem
        r = np.rint(np.fft.ifft(np.conj(f)[:, None, :] * f[None, :, :], axis=2).real).astype(int)
        off = ~np.eye(len(fam), dtype=bool)
        assert set(np.unique(r[off])) <= correlation_values(degree)

    def test_distinct_codes(self):
        fam = gen_gold_family(5)
        assert len({c.tobytes() for c in fam.codes}) == 33

    def test_even_degree_rejected(self):
        with pytest.raises(ValueError, match="even"):
            gen_gold_family(6)

    def test_unsupported_degree(self):
        with pytest.raises(ValueError):
            gen_gold_family(13)

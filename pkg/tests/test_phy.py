"""OFDM transceiver: constellation, grid, FFT, preamble, synchronisation, equalisation."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reconphy import phy
from reconphy.errors import LengthError, SyncError
from reconphy.fixedpoint import FixedValue, Q1_15


def q15(code):
    return FixedValue.from_hex(code, Q1_15).to_real()


def frame_stream(bits, scheme, lead=100, tail=200):
    f = phy.transmit(bits, scheme)
    return np.concatenate([np.zeros(lead), f.samples, np.zeros(tail)]), f


class TestConstellation:
    def test_qpsk_table_codes(self):
        assert phy.modulate([1, 0], phy.QPSK)[0] == pytest.approx(q15(0x5A82) + 1j * q15(0xA57E))
        assert q15(0x5A82) == pytest.approx(0.7071, abs=1e-4)

    def test_qam16_table_codes(self):
        s = phy.modulate([1, 1, 0, 1], phy.QAM16)[0]
        assert s.real == q15(0x796E) and s.imag == q15(0x287A)
        assert s == pytest.approx(0.9485 + 0.3162j, abs=5e-4)
        levels = {(0, 0): 0x8692, (0, 1): 0x287A, (1, 0): 0xD786, (1, 1): 0x796E}
        for bits, code in levels.items():
            assert phy.modulate(list(bits) * 2, phy.QAM16)[0].real == q15(code)

    def test_empty(self):
        assert phy.modulate([], phy.QPSK).size == 0

    @pytest.mark.parametrize("scheme", [phy.QPSK, phy.QAM16])
    def test_exhaustive_round_trip(self, scheme):
        pats = np.array(list(itertools.product([0, 1], repeat=scheme.bits_per_symbol)))
        syms = phy.modulate(pats.ravel(), scheme)
        assert np.array_equal(phy.demodulate(syms, scheme), pats.ravel())

    def test_boundary_tie_maps_to_upper(self):
        assert phy.demodulate(np.array([0j]), phy.QPSK).tolist() == [1, 1]

    def test_thresholds(self):
        assert phy.QAM16.thresholds == pytest.approx([-0.6325, 0, 0.6325], abs=1e-4)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=4, max_size=4), st.floats(0, 0.3), st.floats(0, 2 * np.pi))
    def test_small_noise_decodes(self, bits, r, ang):
        # within half the minimum distance (0.316) of the point, minus Q1.15 slack
        s = phy.modulate(bits, phy.QAM16) + r * np.exp(1j * ang) * 0.316 / 0.3 * 0.99
        assert phy.demodulate(s, phy.QAM16).tolist() == bits

    def test_odd_bit_count_rejected(self):
        with pytest.raises((LengthError, ValueError)):
            phy.modulate([1, 0, 1], phy.QPSK)


class TestGrid:
    def test_layout(self):
        g = phy.GRID
        assert len(g.data_indices) == 48 and len(g.pilot_indices) == 4 and len(g.null_indices) == 12
        assert sorted((g.pilot_indices + 32) % 64 - 32) == [-21, -7, 7, 21]
        assert 0 in g.null_indices
        assert g.pilot_values.real.tolist() == [q15(0x7FFF)] * 3 + [q15(0x8001)]

    def test_zero_data_leaves_only_pilots(self):
        f = phy.map_resources(np.zeros(48))
        assert np.count_nonzero(f) == 4

    def test_round_trip_and_energy(self):
        d = phy.modulate(np.random.default_rng(0).integers(0, 2, 192), phy.QAM16)
        f = phy.map_resources(d)
        back, pil = phy.demap_resources(f)
        assert np.array_equal(back, d)
        assert np.sum(np.abs(f) ** 2) == pytest.approx(np.sum(np.abs(d) ** 2) + np.sum(np.abs(pil) ** 2))


class TestFFT:
    def test_impulse_is_flat(self):
        x = np.zeros(64)
        x[0] = 1
        assert np.allclose(phy.fft64(x), 1 / 8)

    def test_single_bin_is_exponential(self):
        X = np.zeros(64, complex)
        X[5] = 8
        assert np.allclose(phy.ifft64(X), np.exp(2j * np.pi * 5 * np.arange(64) / 64))

    def test_matches_direct_dft_and_numpy(self):
        x = np.random.default_rng(1).standard_normal((100, 64, 2)) @ [1, 1j]
        ref = np.fft.fft(x, axis=-1) / 8
        rms = lambda a: np.sqrt(np.mean(np.abs(a) ** 2))  # noqa: E731
        assert rms(phy.fft64(x) - phy.dft_direct(x)) <= 1e-9
        assert rms(phy.fft64(x) - ref) <= 1e-9
        assert rms(phy.ifft64(phy.fft64(x)) - x) <= 1e-9

    def test_unitary(self):
        x = np.random.default_rng(2).standard_normal(64) + 0j
        assert np.sum(np.abs(phy.ifft64(x)) ** 2) == pytest.approx(np.sum(np.abs(x) ** 2), abs=1e-9)

    def test_length_checked(self):
        with pytest.raises(LengthError):
            phy.fft64(np.zeros(32))


class TestPreambleAndCP:
    def test_cp(self):
        s = np.random.default_rng(3).standard_normal(64) + 0j
        c = phy.add_cp(s)
        assert np.array_equal(c[:16], c[64:80]) and np.array_equal(phy.strip_cp(c), s)
        assert np.allclose(phy.add_cp(np.ones(64)), 1)

    def test_preamble_structure(self):
        p = phy.PREAMBLE
        assert p.size == 320
        assert np.allclose(p[:144], p[16:160])
        assert np.allclose(p[192:256], p[256:320])
        assert np.allclose(p[160:192], p[288:320])

    def test_standard_training_fields(self):
        # short training: 12 occupied tones at multiples of 4; long training: all 52 tones, unit magnitude
        stf_tones = np.flatnonzero(phy.STF_FREQ)
        assert len(stf_tones) == 12 and all(((k + 32) % 64 - 32) % 4 == 0 for k in stf_tones)
        assert np.count_nonzero(phy.LTF_FREQ) == 52
        assert np.allclose(np.abs(phy.LTF_FREQ[phy.LTF_FREQ != 0]), 1)


class TestSync:
    def test_periodic_input_metric_is_one(self):
        x = np.tile(np.random.default_rng(4).standard_normal(16) + 0j, 10)
        _, _, M = phy.autocorrelate(x)
        assert np.allclose(M, 1)

    def test_zero_input(self):
        _, _, M = phy.autocorrelate(np.zeros(200))
        assert np.all(M == 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
    def test_metric_bounded(self, seed, scale):
        rng = np.random.default_rng(seed)
        x = scale * (rng.standard_normal(300) + 1j * rng.standard_normal(300))
        x[rng.integers(0, 300, 50)] = 0
        _, _, M = phy.autocorrelate(x)
        assert M.min() >= 0 and M.max() <= 1 + 1e-6

    def test_plateau_at_20db(self):
        p_sig = np.mean(np.abs(phy.PREAMBLE[:160]) ** 2)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            s = np.concatenate([np.zeros(50), phy.PREAMBLE])
            n0 = p_sig / 100
            r = s + np.sqrt(n0 / 2) * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
            _, _, M = phy.autocorrelate(r)
            assert np.all(M[50 : 50 + 160 - 48] > 0.75)

    def test_exact_boundary(self):
        stream, _ = frame_stream(np.zeros(96, int), phy.QPSK, lead=100)
        _, _, M = phy.autocorrelate(stream)
        assert phy.detect_boundary(M) == 100 + 320

    def test_no_frame(self):
        _, _, M = phy.autocorrelate(np.zeros(500))
        with pytest.raises(SyncError):
            phy.detect_boundary(M)

    def test_first_of_two_frames(self):
        f = phy.transmit(np.ones(96, int), phy.QPSK).samples
        stream = np.concatenate([np.zeros(40), f, np.zeros(60), f, np.zeros(50)])
        _, _, M = phy.autocorrelate(stream)
        assert phy.detect_boundary(M) == 40 + 320

    def test_cfo(self):
        f = phy.PREAMBLE
        assert abs(phy.estimate_cfo(f, "coarse")) < 1e-9 and abs(phy.estimate_cfo(f, "fine")) < 1e-9
        for w in (0.01, np.pi / 16 * 0.999):
            r = phy.apply_cfo(f, w)
            coarse = phy.estimate_cfo(r, "coarse")
            fine = phy.estimate_cfo(phy.correct_cfo(r, coarse), "fine")
            assert abs(coarse + fine - w) < 1e-4


class TestChannelEstimation:
    def test_identity_and_rotation(self):
        occ = phy.LTF_FREQ != 0
        assert np.allclose(phy.estimate_channel(phy.LTF_FREQ)[occ], 1)
        h = 0.6 * np.exp(0.9j)
        assert np.allclose(phy.estimate_channel(h * phy.LTF_FREQ)[occ], h)

    def test_averaging_halves_variance(self):
        rng = np.random.default_rng(5)
        occ = phy.LTF_FREQ != 0
        noise = lambda: 0.1 * (rng.standard_normal((4000, 64)) + 1j * rng.standard_normal((4000, 64)))  # noqa: E731
        one = phy.estimate_channel(phy.LTF_FREQ + noise())[:, occ]
        two = phy.estimate_channel(phy.LTF_FREQ + (noise() + noise()) / 2)[:, occ]
        assert np.var(two) / np.var(one) == pytest.approx(0.5, rel=0.05)

    def test_equalize(self):
        y = np.random.default_rng(6).standard_normal(48) + 0j
        assert np.allclose(phy.equalize(y, np.ones(48)), y)
        H = 0.5 * np.exp(1j * np.pi / 4)
        assert np.allclose(phy.equalize(H * y, np.full(48, H)), y)
        assert np.allclose(phy.equalize(H * y, np.full(48, H), phy.EQ_CONJ), abs(H) ** 2 * y)
        H = np.ones(48, complex)
        H[3] = 1e-9
        out, erased = phy.equalize(y, H, return_erased=True)
        assert erased[3] and out[3] == 0 and erased.sum() == 1


class TestLoopback:
    @pytest.mark.parametrize("scheme", [phy.QPSK, phy.QAM16])
    @pytest.mark.parametrize("eq", [phy.EQ_ZF, phy.EQ_CONJ])
    def test_identity_channel(self, scheme, eq):
        rng = np.random.default_rng(7)
        for _ in range(10):
            bits = rng.integers(0, 2, 48 * scheme.bits_per_symbol)
            stream, _ = frame_stream(bits, scheme, lead=int(rng.integers(0, 100)))
            assert np.array_equal(phy.receive_bits(stream, scheme, equalizer=eq), bits)

    def test_multi_symbol_frame(self):
        bits = np.random.default_rng(8).integers(0, 2, 3 * 192)
        stream, f = frame_stream(bits, phy.QAM16)
        assert f.n_data_symbols == 3
        assert np.array_equal(phy.receive_bits(stream, phy.QAM16, n_data_symbols=3), bits)

    def test_flat_channel_with_cfo(self):
        bits = np.random.default_rng(9).integers(0, 2, 192)
        stream, _ = frame_stream(bits, phy.QAM16, lead=37)
        r = phy.apply_cfo(0.8 * np.exp(2.1j) * stream, 0.02)
        assert np.array_equal(phy.receive_bits(r, phy.QAM16), bits)

    def test_raw_iq_round_trip(self, tmp_path):
        s = (np.arange(10) + 1j * np.arange(10)[::-1]) / 4
        phy.write_raw_iq(tmp_path / "x.iq", s)
        assert (tmp_path / "x.iq").stat().st_size == 80
        assert np.array_equal(phy.read_raw_iq(tmp_path / "x.iq"), s)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmep.constellation import (
    SUPPORTED_ORDERS,
    bits_to_symbols,
    build_constellation,
    slice_nearest,
    symbols_to_bits,
)
from gmep.errors import ConfigurationError, DomainError


class TestBuild:
    def test_qpsk_points(self):
        c = build_constellation(4, 1.0)
        np.testing.assert_allclose(c.real_points, [-1 / np.sqrt(2), 1 / np.sqrt(2)], rtol=1e-15)

    def test_16qam_points(self):
        c = build_constellation(16, 1.0)
        np.testing.assert_allclose(c.real_points, np.array([-3, -1, 1, 3]) / np.sqrt(10), rtol=1e-15)

    def test_energy_scaling(self):
        c1 = build_constellation(4, 1.0)
        c2 = build_constellation(4, 2.0)
        np.testing.assert_allclose(c2.real_points, np.sqrt(2) * c1.real_points, rtol=1e-15)

    @pytest.mark.parametrize("order", SUPPORTED_ORDERS)
    @pytest.mark.parametrize("energy", [1.0, 0.3, 7.5])
    def test_invariants(self, order, energy):
        c = build_constellation(order, energy)
        a = c.real_points
        assert np.all(np.diff(a) > 0)
        np.testing.assert_allclose(a, -a[::-1], atol=1e-15)
        np.testing.assert_allclose(np.diff(a), c.spacing, rtol=1e-12)
        assert a.size**2 == order
        assert abs(np.mean(a)) < 1e-12
        np.testing.assert_allclose(2 * np.mean(a**2), energy, rtol=1e-12)
        np.testing.assert_allclose(np.mean(np.abs(c.complex_points) ** 2), energy, rtol=1e-12)
        assert c.bits_per_symbol == int(np.log2(order))

    @pytest.mark.parametrize("order", [2, 8, 32, 1024, 9])
    def test_unsupported_order(self, order):
        with pytest.raises(ConfigurationError):
            build_constellation(order)

    @pytest.mark.parametrize("energy", [0.0, -1.0, np.nan])
    def test_bad_energy(self, energy):
        with pytest.raises(ConfigurationError):
            build_constellation(4, energy)


class TestSlice:
    def test_examples(self, qpsk, qam16):
        assert slice_nearest(0.9, qpsk) == pytest.approx(1 / np.sqrt(2))
        assert slice_nearest(0.0, qpsk) == pytest.approx(-1 / np.sqrt(2))
        assert slice_nearest(-100.0, qam16) == pytest.approx(-3 / np.sqrt(10))

    def test_tie_goes_to_smaller_point(self):
        # energy 10 puts 16-QAM on the integers -3, -1, 1, 3: midpoints are exact ties
        c = build_constellation(16, 10.0)
        np.testing.assert_array_equal(c.real_points, [-3.0, -1.0, 1.0, 3.0])
        np.testing.assert_array_equal(slice_nearest([-2.0, 0.0, 2.0], c), [-3.0, -1.0, 1.0])

    @settings(max_examples=200, deadline=None)
    @given(
        order=st.sampled_from(SUPPORTED_ORDERS),
        k=st.integers(0, 15),
        frac=st.floats(-0.499, 0.499),
    )
    def test_perturbation_within_half_spacing(self, order, k, frac):
        c = build_constellation(order)
        a = c.real_points[k % c.num_real_points]
        assert slice_nearest(a + frac * c.spacing, c) == a

    def test_vectorized_shape(self, qam16):
        v = np.zeros((3, 5))
        assert slice_nearest(v, qam16).shape == (3, 5)


class TestGray:
    def test_2pam(self, qpsk):
        a = qpsk.real_points
        np.testing.assert_array_equal(symbols_to_bits([a[0], a[1]], qpsk), [0, 1])
        np.testing.assert_array_equal(symbols_to_bits([a[1], a[0]], qpsk), [1, 0])

    def test_4pam_sequence(self, qam16):
        a = qam16.real_points
        labels = [symbols_to_bits([x, a[0]], qam16)[:2].tolist() for x in a]
        assert labels == [[0, 0], [0, 1], [1, 1], [1, 0]]
        # imaginary component uses the same labels in the low bits
        labels_im = [symbols_to_bits([a[0], x], qam16)[2:].tolist() for x in a]
        assert labels_im == labels

    @pytest.mark.parametrize("order", SUPPORTED_ORDERS)
    def test_adjacent_levels_differ_in_one_bit(self, order):
        c = build_constellation(order)
        a = c.real_points
        pairs = np.stack([a, np.full_like(a, a[0])], axis=-1)
        bits = symbols_to_bits(pairs, c)[:, : c.bits_per_real]
        assert np.all(np.abs(np.diff(bits.astype(int), axis=0)).sum(axis=1) == 1)

    @pytest.mark.parametrize("order", SUPPORTED_ORDERS)
    def test_round_trip(self, order):
        c = build_constellation(order)
        pts = c.complex_points
        pairs = np.stack([pts.real, pts.imag], axis=-1)
        bits = symbols_to_bits(pairs, c)
        np.testing.assert_array_equal(bits_to_symbols(bits, c), pairs)
        # labels form a bijection onto all bit patterns
        assert len({tuple(b) for b in bits}) == order

    def test_point_not_in_constellation(self, qpsk):
        with pytest.raises(DomainError):
            symbols_to_bits([0.1, 0.7071067811865476], qpsk)

    def test_bad_bits(self, qpsk):
        with pytest.raises(DomainError):
            bits_to_symbols([0, 2], qpsk)
        with pytest.raises(DomainError):
            bits_to_symbols([0, 1, 1], qpsk)

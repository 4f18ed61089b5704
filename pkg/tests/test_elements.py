import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oamtomo import Basis, CapacityError, InvalidArgument, make_basis
from oamtomo.elements import (
    OpticalElement,
    beam_splitter,
    dove_prism,
    dove_prism_pair,
    gouy_stack,
    path_swap,
    phase_plate,
    slm_shift,
)

angles = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)
SYM = Basis.from_range(-4, 4)
RADIAL = Basis.from_range(-2, 2, p_max=2)


def amp(el, src, dst, in_path=0, out_path=0):
    """Amplitude <out_path, dst| el |in_path, src>."""
    b, ob = el.basis, el.out_basis
    return el.matrix[out_path * ob.dim + ob.index(dst), in_path * b.dim + b.index(src)]


def is_unitary(m, tol=1e-12):
    return np.abs(m @ m.conj().T - np.eye(len(m))).max() < tol


class TestDovePrism:
    def test_flip_with_phase(self):
        el = dove_prism(math.pi / 2, 0, SYM, 1)
        assert amp(el, 3, -3) == pytest.approx(-1)

    def test_zero_angle_pure_flip(self):
        el = dove_prism(0.0, 0, SYM, 1)
        for l in range(-4, 5):
            assert amp(el, l, -l) == pytest.approx(1)

    @given(angles)
    def test_involution(self, beta):
        m = dove_prism(beta, 0, SYM, 2).matrix
        np.testing.assert_allclose(m @ m, np.eye(len(m)), atol=1e-12)
        assert is_unitary(m)

    def test_asymmetric_basis_rejected(self):
        with pytest.raises(InvalidArgument):
            dove_prism(0.1, 0, Basis.from_range(0, 3), 1)

    def test_other_paths_untouched(self):
        m = dove_prism(0.3, 1, SYM, 2).matrix
        np.testing.assert_array_equal(m[:SYM.dim, :SYM.dim], np.eye(SYM.dim))

    def test_radial_index_preserved(self):
        el = dove_prism(0.2, 0, RADIAL, 1)
        assert abs(amp(el, (2, 1), (-2, 1))) == pytest.approx(1)


class TestDovePrismPair:
    def test_pi_half(self):
        assert amp(dove_prism_pair(math.pi / 2, 0, SYM, 1), 1, 1) == pytest.approx(-1)

    def test_zero_is_identity(self):
        np.testing.assert_array_equal(dove_prism_pair(0.0, 0, SYM, 1).matrix, np.eye(SYM.dim))

    @given(angles)
    def test_equals_two_flips(self, beta):
        pair = dove_prism_pair(beta, 0, SYM, 1).matrix
        flips = dove_prism(0.0, 0, SYM, 1).matrix @ dove_prism(beta, 0, SYM, 1).matrix
        np.testing.assert_allclose(pair, flips, atol=1e-12)

    @given(angles, angles)
    def test_commutes_with_gouy(self, a, b):
        p = dove_prism_pair(b, 0, RADIAL, 1).matrix
        g = gouy_stack(a, 0, RADIAL, 1).matrix
        np.testing.assert_allclose(p @ g, g @ p, atol=1e-12)

    def test_cost(self):
        assert dove_prism_pair(0.1).cost == 2


class TestGouy:
    def test_pi_on_l2(self):
        assert amp(gouy_stack(math.pi, 0, SYM, 1), 2, 2) == pytest.approx(-1)

    def test_zero_identity(self):
        np.testing.assert_array_equal(gouy_stack(0.0, 0, RADIAL, 1).matrix, np.eye(RADIAL.dim))

    def test_radial(self):
        el = gouy_stack(math.pi / 2, 0, RADIAL, 1)
        assert amp(el, (0, 1), (0, 1)) == pytest.approx(np.exp(1.5j * math.pi))

    def test_cost(self):
        assert gouy_stack(0.1).cost == 3

    @given(angles)
    def test_inverse(self, a):
        el = gouy_stack(a, 0, RADIAL, 1)
        inv = el.inverse().bind(RADIAL, 1)
        np.testing.assert_allclose(inv.matrix @ el.matrix, np.eye(RADIAL.dim), atol=1e-12)


class TestBeamSplitter:
    def test_action_on_a(self):
        el = beam_splitter(0, 1, SYM, 2)
        s = 1 / math.sqrt(2)
        assert amp(el, 2, 2, 0, 0) == pytest.approx(s)
        assert amp(el, 2, 2, 0, 1) == pytest.approx(s)

    def test_action_on_b(self):
        el = beam_splitter(0, 1, SYM, 2)
        s = 1 / math.sqrt(2)
        assert amp(el, -1, -1, 1, 0) == pytest.approx(s)
        assert amp(el, -1, -1, 1, 1) == pytest.approx(-s)

    def test_twice_is_identity(self):
        m = beam_splitter(0, 2, SYM, 3).matrix
        np.testing.assert_allclose(m @ m, np.eye(len(m)), atol=1e-15)

    def test_equal_paths(self):
        with pytest.raises(InvalidArgument):
            beam_splitter(1, 1)


class TestSlm:
    def test_shift_up(self):
        b = make_basis(3)
        el = slm_shift(+1, 0, b, 1)
        assert amp(el, 2, 3) == 1
        assert 4 in el.out_basis

    def test_crosses_zero(self):
        el = slm_shift(+1, 0, make_basis(2), 1)
        assert amp(el, -1, 0) == 1

    def test_shift_back_identity(self):
        b = make_basis(3)
        up = slm_shift(+1, 0, b, 2)
        down = slm_shift(-1, 0, up.out_basis, 2)
        prod = down.matrix @ up.matrix
        rows = [p * down.out_basis.dim + down.out_basis.index(m) for p in range(2) for m in b.modes]
        np.testing.assert_array_equal(prod[rows], np.eye(2 * b.dim))

    def test_isometry(self):
        m = slm_shift(-1, 1, SYM, 2).matrix
        np.testing.assert_allclose(m.conj().T @ m, np.eye(m.shape[1]))

    def test_fixed_basis_capacity(self):
        with pytest.raises(CapacityError):
            slm_shift(+1, 0, make_basis(2), 1, widen=False)

    def test_zero_shift_rejected(self):
        with pytest.raises(InvalidArgument):
            slm_shift(0)


class TestPhasePlate:
    def test_pi(self):
        np.testing.assert_allclose(phase_plate(math.pi, 0, SYM, 1).matrix, -np.eye(SYM.dim), atol=1e-15)

    def test_zero(self):
        np.testing.assert_array_equal(phase_plate(0.0, 0, SYM, 1).matrix, np.eye(SYM.dim))

    def test_half_twice(self):
        h = phase_plate(math.pi / 2, 1, SYM, 2).matrix
        np.testing.assert_allclose(h @ h, phase_plate(math.pi, 1, SYM, 2).matrix, atol=1e-15)


def test_path_swap():
    m = path_swap(0, 1, SYM, 2).matrix
    d = SYM.dim
    np.testing.assert_array_equal(m[:d, d:], np.eye(d))
    assert path_swap().cost == 1


@pytest.mark.parametrize("el", [
    dove_prism(0.25, 1), dove_prism_pair(-0.5, 0), gouy_stack(1.25, 2), beam_splitter(0, 2),
    slm_shift(-1, 1), phase_plate(3.0, 0), path_swap(1, 2),
])
def test_netlist_roundtrip(el):
    line = el.netlist_line()
    back = OpticalElement.from_netlist_line(line)
    assert back.kind == el.kind and back.paths == el.paths and back.value == el.value


@pytest.mark.parametrize("line", ["", "Laser path=0", "GouyStack path=0", "PhasePlate theta"])
def test_netlist_errors(line):
    with pytest.raises(InvalidArgument):
        OpticalElement.from_netlist_line(line)


def test_path_range_checked():
    with pytest.raises(InvalidArgument):
        phase_plate(0.1, 3).matrix_for(SYM, 2)

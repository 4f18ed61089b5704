import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from oamtomo import InvalidArgument, ResolutionError, TruncationError, fidelity
from oamtomo.ahst import (
    AHSTReconstructor,
    Grid,
    IntensityGrid,
    KernelCache,
    continuous_ft,
    fourier_kernel,
    intensity_from_density,
    intensity_term,
    lg_field,
    reconstruct_negative,
    reconstruct_positive,
    truncation_radius,
)

from oracles import hankel_kernel, lg_closed_form, random_density, random_pure

TWO_OVER_PI = 2 / math.pi


class TestFields:
    def test_matches_closed_form(self, ref_grid):
        xx, yy = np.meshgrid(ref_grid.x, ref_grid.x)
        for ell in (-3, 0, 2):
            np.testing.assert_allclose(lg_field(ell, ref_grid).values, lg_closed_form(ell, xx, yy), atol=1e-14)

    @pytest.mark.parametrize("ell", range(-4, 5))
    def test_normalized(self, ref_grid, ell):
        assert lg_field(ell, ref_grid).norm2() == pytest.approx(1, abs=1e-6)

    def test_gaussian_peak_at_centre(self, ref_grid):
        v = np.abs(lg_field(0, ref_grid).values)
        iy, ix = np.unravel_index(v.argmax(), v.shape)
        assert ref_grid.x[ix] == 0 and ref_grid.x[iy] == 0

    def test_ring_radius(self, ref_grid):
        v = np.abs(lg_field(3, ref_grid).values)
        mid = ref_grid.size // 2
        assert v[mid, mid] == 0
        row = v[mid, mid:]
        assert ref_grid.x[mid + row.argmax()] == pytest.approx(math.sqrt(1.5), abs=ref_grid.dx)

    def test_orthogonal(self, ref_grid):
        f1, f2 = lg_field(1, ref_grid), lg_field(2, ref_grid)
        assert abs(np.vdot(f1.values, f2.values) * ref_grid.dx ** 2) < 1e-8

    def test_under_resolved(self):
        with pytest.raises(ResolutionError) as err:
            lg_field(1, Grid(128, 8.0))
        assert err.value.required == 256

    def test_too_small_extent(self):
        with pytest.raises(ResolutionError):
            lg_field(4, Grid(256, 5.0))


class TestIntensity:
    def test_pure_mode(self, small_grid):
        img = intensity_from_density(np.diag([1.0, 0]), small_grid)
        np.testing.assert_allclose(img.values, np.abs(lg_field(1, small_grid).values) ** 2, atol=1e-15)

    def test_mixture_is_azimuthally_symmetric(self, small_grid):
        img = intensity_from_density(np.diag([0.5, 0.5]), small_grid).values
        inner = img[1:, 1:]  # drop the unpaired edge sample so the grid is centred
        np.testing.assert_allclose(inner, np.rot90(inner), atol=1e-15)
        xx, yy = np.meshgrid(small_grid.x, small_grid.x)
        expected = sum(np.abs(lg_closed_form(l, xx, yy)) ** 2 for l in (1, 2)) / 2
        np.testing.assert_allclose(img, expected, atol=1e-14)

    def test_superposition_has_one_lobe(self, small_grid):
        psi = np.array([1, 1]) / math.sqrt(2)
        img = intensity_from_density(np.outer(psi, psi), small_grid).values
        cross = (img - intensity_from_density(np.eye(2) / 2, small_grid).values)[1:, 1:]
        # cos(phi) interference: odd under (x, y) -> (-x, -y), so a single lobe
        np.testing.assert_allclose(cross, -cross[::-1, ::-1], atol=1e-15)
        assert cross.max() > 0.05

    def test_total_is_trace(self, small_grid, rng):
        rho = 0.4 * random_density(3, 3, rng)
        assert intensity_from_density(rho, small_grid).total() == pytest.approx(0.4, abs=1e-4)

    def test_non_hermitian(self, small_grid):
        with pytest.raises(InvalidArgument):
            intensity_from_density(np.array([[0.5, 0.2], [0.0, 0.5]]), small_grid)

    def test_degeneracy(self, small_grid):
        for l1, l2 in ((1, 2), (1, 3), (2, 3)):
            a = intensity_term(l1, l2, small_grid)
            b = intensity_term(-l2, -l1, small_grid)
            assert np.abs(a - b).max() < 1e-10


class TestKernels:
    @pytest.mark.parametrize("pair", [(0, 0), (1, 2), (3, 1), (2, 2), (-2, -1)])
    def test_hankel_oracle(self, ref_grid, pair):
        kern = fourier_kernel(*pair, ref_grid)
        mid = ref_grid.size // 2
        for iy, ix in ((mid, mid), (mid + 3, mid + 1), (mid - 2, mid + 5), (mid + 7, mid - 4)):
            expected = hankel_kernel(*pair, ref_grid.k[ix], ref_grid.k[iy])
            assert abs(kern.samples[iy, ix] - expected) < 1e-10

    def test_gaussian_closed_form(self, ref_grid):
        kern = fourier_kernel(0, 0, ref_grid).samples
        expected = np.exp(-(math.pi * ref_grid.k_radius) ** 2 / 2)
        assert np.abs(kern - expected).max() < 1e-12

    def test_symmetry(self, ref_grid):
        a = fourier_kernel(1, 2, ref_grid).samples
        b = fourier_kernel(-2, -1, ref_grid).samples
        assert np.abs(a - b).max() < 1e-8

    def test_mixed_helicity(self, ref_grid):
        with pytest.raises(InvalidArgument):
            fourier_kernel(1, -2, ref_grid)

    def test_self_orthogonality(self, plus4):
        pairs, gram = plus4.orthogonality_gram()
        i = pairs.index((1, 2))
        assert gram[i, i].real == pytest.approx(TWO_OVER_PI, rel=0.01)

    def test_truncation_error(self, ref_grid):
        with pytest.raises(TruncationError) as err:
            truncation_radius(fourier_kernel(3, 3, ref_grid), 1e-10, weight_cap=1e3)
        assert err.value.safe_radius == pytest.approx(math.sqrt(2 * math.log(1e3)) / math.pi)

    def test_cache_roundtrip(self, small_grid, tmp_path):
        cache = KernelCache()
        k = cache.get(1, 2, small_grid)
        cache.get(0, 3, small_grid)
        cache.save(tmp_path)
        assert (tmp_path / "manifest.json").exists()
        fresh = KernelCache()
        assert fresh.load(tmp_path) == 2
        assert np.array_equal(fresh.get(1, 2, small_grid).samples, k.samples)

    def test_cache_concurrent(self, small_grid):
        cache = KernelCache()
        got = []
        threads = [threading.Thread(target=lambda: got.append(cache.get(2, 1, small_grid))) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(cache) == 1 and all(g is got[0] for g in got)


class TestReconstruction:
    def test_pure_l1(self, plus4, ref_grid):
        rho = np.zeros((4, 4))
        rho[0, 0] = 1
        out = plus4.transform(intensity_from_density(rho, ref_grid))
        assert out[0, 0].real >= 0.99
        assert np.abs(out - rho).max() < 0.01

    def test_maximally_mixed(self, ref_grid):
        out = reconstruct_positive(intensity_from_density(np.eye(3) / 3, ref_grid), 3)
        np.testing.assert_allclose(np.diag(out).real, 1 / 3, atol=0.01)

    def test_zero(self, plus4, minus4, ref_grid):
        zero = np.zeros((ref_grid.size,) * 2)
        assert np.array_equal(plus4.transform(zero), np.zeros((4, 4)))
        assert np.array_equal(minus4.transform(zero), np.zeros((4, 4)))

    def test_negative(self, ref_grid):
        rho = np.zeros((2, 2))
        rho[1, 1] = 1
        img = intensity_from_density(rho, ref_grid, ells=[-1, -2])
        assert reconstruct_negative(img, 2)[1, 1].real >= 0.99

    def test_negative_is_transpose_of_positive(self, plus4, minus4, ref_grid, rng):
        rho = random_density(4, 4, rng)
        img = intensity_from_density(rho, ref_grid, ells=[-1, -2, -3, -4])
        np.testing.assert_allclose(plus4.transform(img), minus4.transform(img).T, atol=1e-12)
        np.testing.assert_allclose(minus4.transform(img), rho, atol=1e-8)

    def test_linearity(self, plus4, ref_grid, rng):
        i1 = intensity_from_density(random_density(4, 2, rng), ref_grid).values
        i2 = intensity_from_density(random_density(4, 3, rng), ref_grid).values
        lhs = plus4.transform(0.3 * i1 + 1.7 * i2)
        rhs = 0.3 * plus4.transform(i1) + 1.7 * plus4.transform(i2)
        assert np.abs(lhs - rhs).max() < 1e-8

    @settings(max_examples=10)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
    def test_roundtrip_property(self, plus4, ref_grid, seed, rank):
        rho = random_density(4, rank, np.random.default_rng(seed))
        out = plus4.transform(intensity_from_density(rho, ref_grid))
        assert fidelity(rho, out) >= 0.99
        assert np.abs(out - rho).max() < 1e-6

    def test_batch(self, plus4, ref_grid, rng):
        imgs = np.stack([intensity_from_density(random_pure(4, rng), ref_grid).values for _ in range(3)])
        batch = plus4.transform(imgs)
        assert batch.shape == (3, 4, 4)
        np.testing.assert_allclose(batch[1], plus4.transform(imgs[1]))

    def test_wrong_size(self, plus4):
        with pytest.raises(InvalidArgument):
            plus4.transform(np.zeros((64, 64)))

    def test_psd_repair_flag(self, ref_grid, rng):
        rho = random_pure(3, rng)
        img = intensity_from_density(rho, ref_grid).values
        noisy = img + 1e-3 * rng.normal(size=img.shape)
        raw = AHSTReconstructor(3).fit().transform(noisy)
        fixed = AHSTReconstructor(3, psd_repair=True).fit().transform(noisy)
        assert np.linalg.eigvalsh(raw).min() < 0
        assert np.linalg.eigvalsh(fixed).min() >= -1e-12

    def test_include_zero(self, ref_grid):
        rho = np.diag([0.5, 0.5, 0.0])
        img = intensity_from_density(rho, ref_grid, ells=[0, 1, 2])
        out = AHSTReconstructor(2, include_zero=True).fit().transform(img)
        np.testing.assert_allclose(out, rho, atol=1e-6)


class TestAperture:
    def test_gram_correction_exact_on_small_disk(self, ref_grid, rng):
        rho = random_density(3, 3, rng)
        img = intensity_from_density(rho, ref_grid)
        est = AHSTReconstructor(3, aperture=1.0).fit()
        assert est.gram_condition_ < 1e3
        np.testing.assert_allclose(est.transform(img), rho, atol=1e-8)

    def test_uncorrected_small_disk_is_biased(self, ref_grid, rng):
        rho = random_density(3, 3, rng)
        img = intensity_from_density(rho, ref_grid)
        out = AHSTReconstructor(3, aperture=1.0, gram_correction=False).fit().transform(img)
        assert np.abs(out - rho).max() > 0.05

    def test_default_gram_is_identity(self, plus4):
        np.testing.assert_allclose(plus4.aperture_gram_, np.eye(16), atol=1e-7)

    def test_aperture_beyond_safe_radius(self):
        with pytest.raises(TruncationError):
            AHSTReconstructor(2, aperture=3.0, weight_cap=1e8).fit()

    def test_shot_noise_scaling(self, ref_grid):
        rho = np.eye(2) / 2
        img = intensity_from_density(rho, ref_grid)
        est = AHSTReconstructor(2, aperture=1.0).fit()
        err = {}
        for n in (1e5, 1e7):
            devs = [np.abs(est.transform(img.poisson(n, np.random.default_rng(s))) - rho).max() for s in range(6)]
            err[n] = np.mean(devs)
        # deviations shrink like 1/sqrt(N): a factor ~10 for 100x the photons
        assert 5 < err[1e5] / err[1e7] < 20


class TestEstimatorApi:
    def test_params(self):
        est = AHSTReconstructor(ell_max=2, helicity=-1, aperture=0.8)
        assert est.get_params()["aperture"] == 0.8
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        est.set_params(ell_max=3)
        assert est.ell_max == 3

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            AHSTReconstructor().transform(np.zeros((512, 512)))

    def test_bad_helicity(self):
        with pytest.raises(InvalidArgument):
            AHSTReconstructor(helicity=0).fit()

    def test_fit_transform(self, ref_grid):
        img = intensity_from_density(np.diag([1.0, 0]), ref_grid).values
        out = AHSTReconstructor(2).fit_transform(img)
        assert out[0, 0].real == pytest.approx(1, abs=1e-8)


class TestIntensityIO:
    def test_csv_roundtrip(self, small_grid, tmp_path, rng):
        img = intensity_from_density(random_density(2, 2, rng), small_grid)
        img.to_csv(tmp_path / "i.csv", comments=["config_hash=abc"])
        back = IntensityGrid.from_csv(tmp_path / "i.csv")
        assert back.grid == small_grid
        assert np.array_equal(back.values, img.values)

    def test_pgm(self, small_grid, tmp_path):
        img = intensity_from_density(np.diag([1.0, 0]), small_grid)
        img.to_pgm(tmp_path / "i.pgm")
        data = (tmp_path / "i.pgm").read_bytes()
        assert data.startswith(b"P5\n256 256\n65535\n")
        pix = np.frombuffer(data[len(b"P5\n256 256\n65535\n"):], dtype=">u2")
        assert pix.size == 256 * 256 and pix.max() == 65535

    def test_poisson_reproducible(self, small_grid):
        img = intensity_from_density(np.diag([1.0, 0]), small_grid)
        a = img.poisson(1e5, np.random.default_rng(3))
        b = img.poisson(1e5, np.random.default_rng(3))
        assert np.array_equal(a.values, b.values)
        assert a.total() == pytest.approx(1, rel=0.02)

    def test_shape_checked(self, small_grid):
        with pytest.raises(InvalidArgument):
            IntensityGrid(np.zeros((4, 4)), small_grid)

    def test_continuous_ft_of_gaussian(self, ref_grid):
        r2 = ref_grid.polar[0] ** 2
        g = np.exp(-math.pi * r2)
        np.testing.assert_allclose(continuous_ft(g, ref_grid), np.exp(-math.pi * ref_grid.k_radius ** 2), atol=1e-12)

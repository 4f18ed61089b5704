"""Intensity-based density-matrix reconstruction for a single OAM helicity.

Fields are p = 0 Laguerre-Gauss modes

    f_l(r, phi) = sqrt(2 / (pi |l|! w0^2)) (sqrt2 r / w0)^|l| exp(-r^2/w0^2) exp(i l phi)

sampled on a centred Cartesian grid.  The continuous Fourier transform uses
``F[g](k) = int g(x) exp(-2 pi i k.x) d^2x``, evaluated with an FFT scaled by
the pixel area.  The kernels ``P_ab = F[f_a f_b^*]`` are orthogonal under the
weight ``exp(pi^2 k^2 w0^2 / 2)`` with norm ``2 / (pi w0^2)``, so

    rho_ab = (pi w0^2 / 2) int F[I] P_ab^* exp(pi^2 k^2 w0^2 / 2) d^2k.

The weight grows like a Gaussian, so each kernel's integral is cut off at the
radius where ``|P_ab|^2 * weight`` has fallen by ``truncation_tol`` from its
peak.  Beyond ``weight_cap`` the weight would amplify floating-point noise in
the transforms and the reconstruction refuses to run.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .basis import psd_project
from .exceptions import InvalidArgument, ResolutionError, TruncationError

SAMPLES_PER_WAIST = 16


@dataclass(frozen=True)
class Grid:
    """Square ``size x size`` grid covering ``[-extent, extent) * w0`` on both axes."""

    size: int = 512
    extent: float = 8.0
    w0: float = 1.0

    def __post_init__(self):
        if self.size < 2 or self.size % 2:
            raise InvalidArgument("grid size must be an even integer >= 2")
        if self.extent <= 0 or self.w0 <= 0:
            raise InvalidArgument("extent and w0 must be positive")

    @property
    def dx(self) -> float:
        return 2 * self.extent * self.w0 / self.size

    @property
    def dk(self) -> float:
        return 1.0 / (self.size * self.dx)

    @cached_property
    def x(self) -> np.ndarray:
        return (np.arange(self.size) - self.size // 2) * self.dx

    @cached_property
    def k(self) -> np.ndarray:
        return (np.arange(self.size) - self.size // 2) * self.dk

    @cached_property
    def polar(self) -> tuple[np.ndarray, np.ndarray]:
        xx, yy = np.meshgrid(self.x, self.x, indexing="xy")
        return np.hypot(xx, yy), np.arctan2(yy, xx)

    @cached_property
    def k_radius(self) -> np.ndarray:
        kx, ky = np.meshgrid(self.k, self.k, indexing="xy")
        return np.hypot(kx, ky)

    def check_resolves(self, ell: int) -> None:
        per_waist = self.size / (2 * self.extent)
        if per_waist < SAMPLES_PER_WAIST:
            need = math.ceil(2 * self.extent * SAMPLES_PER_WAIST)
            raise ResolutionError(
                f"{per_waist:.1f} samples per waist, need >= {SAMPLES_PER_WAIST} "
                f"(size >= {need} at extent {self.extent})", required=need)
        reach = 4 * (1 + math.sqrt(abs(ell)) / 2)
        if self.extent < reach - 1e-12:
            raise ResolutionError(
                f"extent {self.extent} w0 too small for |l|={abs(ell)}, need >= {reach:.3g} w0",
                required=reach)

    def header(self) -> str:
        return f"size={self.size} extent={float(self.extent)!r} w0={float(self.w0)!r}"


def _radial(ell: int, grid: Grid) -> np.ndarray:
    a = abs(ell)
    r, _ = grid.polar
    w0 = grid.w0
    norm = math.sqrt(2 / (math.pi * math.factorial(a) * w0 ** 2))
    return norm * (math.sqrt(2) * r / w0) ** a * np.exp(-(r / w0) ** 2)


@dataclass(frozen=True)
class LgField:
    ell: int
    grid: Grid
    values: np.ndarray
    p: int = 0

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.dx ** 2)


def lg_field(ell: int, grid: Grid | None = None, w0: float | None = None) -> LgField:
    """Sampled, unit-norm p = 0 LG mode with azimuthal factor exactly ``exp(i ell phi)``."""
    grid = grid or Grid(w0=w0 or 1.0)
    if w0 is not None and w0 != grid.w0:
        raise InvalidArgument("w0 disagrees with the grid")
    grid.check_resolves(ell)
    _, phi = grid.polar
    vals = _radial(ell, grid) * np.exp(1j * ell * phi)
    vals.setflags(write=False)
    return LgField(int(ell), grid, vals)


@dataclass(frozen=True)
class IntensityGrid:
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.size, self.grid.size):
            raise InvalidArgument(f"intensity shape {v.shape} does not match grid size {self.grid.size}")
        object.__setattr__(self, "values", v)

    def total(self) -> float:
        """``int I r dr dphi`` on the grid (the detected probability)."""
        return float(self.values.sum() * self.grid.dx ** 2)

    def poisson(self, photons: float, rng: np.random.Generator) -> "IntensityGrid":
        """Photon-counted image rescaled back to intensity units."""
        cell = self.grid.dx ** 2
        counts = rng.poisson(np.clip(self.values, 0, None) * cell * photons)
        return IntensityGrid(counts / (cell * photons), self.grid)

    def to_csv_text(self, comments=()) -> str:
        lines = [f"# {c}" for c in comments] + [f"# {self.grid.header()}"]
        lines += [",".join(repr(float(v)) for v in row) for row in self.values]
        return "\n".join(lines) + "\n"

    def to_csv(self, path, comments=()) -> None:
        Path(path).write_text(self.to_csv_text(comments))

    @classmethod
    def from_csv(cls, path) -> "IntensityGrid":
        text = Path(path).read_text().splitlines()
        meta_line = next((ln for ln in text if ln.startswith("#") and "size=" in ln), None)
        if meta_line is None:
            raise InvalidArgument("intensity CSV needs a '# size=.. extent=.. w0=..' header")
        meta = dict(tok.split("=", 1) for tok in meta_line.lstrip("#").split())
        grid = Grid(int(meta["size"]), float(meta["extent"]), float(meta["w0"]))
        vals = np.array([[float(v) for v in row.split(",")]
                         for row in text if row.strip() and not row.startswith("#")])
        return cls(vals, grid)

    def to_pgm_bytes(self, comments=()) -> bytes:
        """16-bit binary PGM, scaled so the brightest pixel is 65535."""
        v = np.clip(self.values, 0, None)
        peak = v.max()
        img = np.zeros(v.shape, dtype=">u2") if peak <= 0 else np.round(v / peak * 65535).astype(">u2")
        notes = "".join(f"# {c}\n" for c in comments)
        header = f"P5\n{notes}{v.shape[1]} {v.shape[0]}\n65535\n".encode()
        # image rows run top to bottom, so flip y
        return header + img[::-1].tobytes()

    def to_pgm(self, path, comments=()) -> None:
        Path(path).write_bytes(self.to_pgm_bytes(comments))


def _check_hermitian(rho: np.ndarray, tol: float = 1e-10):
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidArgument(f"density matrix must be square, got {rho.shape}")
    if np.abs(rho - rho.conj().T).max(initial=0.0) > tol:
        raise InvalidArgument("density matrix is not Hermitian")


def intensity_term(ell1: int, ell2: int, grid: Grid) -> np.ndarray:
    """``f_{l1} f_{l2}^*``, the intensity contributed by ``|l1><l2|`` (complex)."""
    return lg_field(ell1, grid).values * np.conj(lg_field(ell2, grid).values)


def intensity_from_density(rho, grid: Grid, ells=None) -> IntensityGrid:
    """``I = sum_ab f_a f_b^* rho_ab`` with normalized fields (``A = 1``).

    ``ells`` labels the rows of ``rho``; by default ``1..n``.  Pass
    ``-1..-n`` for a negative-helicity marginal.
    """
    rho = np.asarray(rho, dtype=complex)
    _check_hermitian(rho)
    n = rho.shape[0]
    ells = list(range(1, n + 1)) if ells is None else [int(l) for l in ells]
    if len(ells) != n:
        raise InvalidArgument("ells does not match the matrix dimension")
    fields = [lg_field(l, grid).values for l in ells]
    total = np.zeros((grid.size, grid.size), dtype=complex)
    for a in range(n):
        if rho[a, a] != 0:
            total += rho[a, a] * np.abs(fields[a]) ** 2
        for b in range(a + 1, n):
            if rho[a, b] != 0:
                total += 2 * (rho[a, b] * fields[a] * np.conj(fields[b]))
    vals = total.real
    vals[(vals < 0) & (vals >= -1e-12)] = 0.0
    return IntensityGrid(vals, grid)


def continuous_ft(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Samples of ``int g(x) exp(-2 pi i k.x) d^2x`` on the grid's k axes."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(values))) * grid.dx ** 2


@dataclass(frozen=True)
class FourierKernel:
    ell1: int
    ell2: int
    grid: Grid
    samples: np.ndarray


class KernelCache:
    """Thread-safe memo of Fourier kernels keyed by ``(ell1, ell2, grid)``."""

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._store)

    def get(self, ell1: int, ell2: int, grid: Grid) -> FourierKernel:
        key = (int(ell1), int(ell2), grid)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        kern = _compute_kernel(int(ell1), int(ell2), grid)
        with self._lock:
            return self._store.setdefault(key, kern)

    def clear(self):
        with self._lock:
            self._store.clear()

    def save(self, directory) -> None:
        """Little-endian float64 ``(re, im)`` arrays plus ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        with self._lock:
            items = list(self._store.items())
        for (a, b, grid), kern in items:
            name = f"P_{a}_{b}_{grid.size}_{grid.extent:g}_{grid.w0:g}.bin"
            np.ascontiguousarray(kern.samples).astype("<c16").view("<f8").tofile(d / name)
            entries.append({"ell1": a, "ell2": b, "size": grid.size, "extent": grid.extent,
                            "w0": grid.w0, "file": name, "dtype": "<f8", "layout": "re,im interleaved"})
        (d / "manifest.json").write_text(json.dumps({"kernels": entries}, indent=1))

    def load(self, directory) -> int:
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        for e in manifest["kernels"]:
            grid = Grid(int(e["size"]), float(e["extent"]), float(e["w0"]))
            raw = np.fromfile(d / e["file"], dtype="<f8")
            samples = raw.view("<c16").reshape(grid.size, grid.size).astype(complex)
            samples.setflags(write=False)
            with self._lock:
                self._store[(int(e["ell1"]), int(e["ell2"]), grid)] = FourierKernel(
                    int(e["ell1"]), int(e["ell2"]), grid, samples)
        return len(manifest["kernels"])


def _compute_kernel(ell1: int, ell2: int, grid: Grid) -> FourierKernel:
    samples = continuous_ft(intensity_term(ell1, ell2, grid), grid)
    samples.setflags(write=False)
    return FourierKernel(ell1, ell2, grid, samples)


default_cache = KernelCache()


def fourier_kernel(ell1: int, ell2: int, grid: Grid, cache: KernelCache | None = default_cache) -> FourierKernel:
    """``P_{l1,l2} = F[f_{l1} f_{l2}^*]`` for a same-helicity pair."""
    if ell1 * ell2 < 0:
        raise InvalidArgument(
            f"kernel ({ell1},{ell2}) mixes helicities; map it with P(l1,l2) = P(-l2,-l1) first")
    if cache is None:
        return _compute_kernel(ell1, ell2, grid)
    return cache.get(ell1, ell2, grid)


def weight_exponent(grid: Grid) -> np.ndarray:
    """``pi^2 k^2 w0^2 / 2`` on the k grid (log of the orthogonality weight)."""
    return (math.pi * grid.w0 * grid.k_radius) ** 2 / 2


def safe_radius(grid: Grid, weight_cap: float) -> float:
    return math.sqrt(2 * math.log(weight_cap)) / (math.pi * grid.w0)


def truncation_radius(kernel: FourierKernel, tol: float, weight_cap: float = 1e24) -> float:
    """Radius beyond which ``|P|^2 * weight`` stays below ``tol`` times its peak."""
    grid = kernel.grid
    expo = weight_exponent(grid)
    with np.errstate(divide="ignore"):
        log_env = 2 * np.log(np.abs(kernel.samples)) + expo
    k_safe = safe_radius(grid, weight_cap)
    inside = grid.k_radius <= k_safe
    peak = log_env[inside].max()
    # Walk outward on radial shells from the peak; the first shell below threshold
    # ends the integral (past it the samples sit at the round-off floor).
    kr = grid.k_radius[inside]
    shells = np.round(kr / grid.dk).astype(int)
    shell_max = np.full(shells.max() + 1, -np.inf)
    np.maximum.at(shell_max, shells, log_env[inside])
    start = int(np.argmax(shell_max))
    below = np.flatnonzero(shell_max[start:] < peak + math.log(tol))
    radius = (start + below[0]) * grid.dk if below.size else np.inf
    if radius > k_safe * (1 - 1e-9) or radius > grid.k.max():
        raise TruncationError(
            f"kernel ({kernel.ell1},{kernel.ell2}) has not decayed to {tol:g} of its peak "
            f"inside the safe radius {k_safe:.4g}/w0; raise the tolerance or the weight cap",
            safe_radius=k_safe)
    return radius


class AHSTReconstructor(TransformerMixin, BaseEstimator):
    """Reconstruct single-helicity density matrices from intensity images.

    ``fit`` builds the kernels and integration masks for the grid;
    ``transform`` maps images (``(M, M)`` or ``(n, M, M)`` arrays, or
    :class:`IntensityGrid` objects) to ``(L, L)`` or ``(n, L, L)`` matrices.
    Rows are ordered ``1..L`` for ``helicity=+1`` and ``-1..-L`` for
    ``helicity=-1`` (``0..L`` with ``include_zero``).
    """

    def __init__(self, ell_max=4, helicity=1, w0=1.0, grid_size=512, extent=8.0,
                 truncation_tol=1e-10, weight_cap=1e24, include_zero=False, psd_repair=False,
                 aperture=None, gram_correction=True):
        self.ell_max = ell_max
        self.helicity = helicity
        self.w0 = w0
        self.grid_size = grid_size
        self.extent = extent
        self.truncation_tol = truncation_tol
        self.weight_cap = weight_cap
        self.include_zero = include_zero
        self.psd_repair = psd_repair
        self.aperture = aperture
        self.gram_correction = gram_correction

    def _ells(self):
        start = 0 if self.include_zero else 1
        return list(range(start, self.ell_max + 1))

    def fit(self, X=None, y=None):
        if self.ell_max < (0 if self.include_zero else 1):
            raise InvalidArgument("ell_max must be >= 1")
        if self.helicity not in (1, -1):
            raise InvalidArgument("helicity must be +1 or -1")
        size = self.grid_size
        if X is not None:
            size = np.asarray(X.values if isinstance(X, IntensityGrid) else X).shape[-1]
        grid = Grid(int(size), float(self.extent), float(self.w0))
        for l in self._ells():
            grid.check_resolves(l)
        ells = self._ells()
        pref = math.pi * grid.w0 ** 2 / 2 * grid.dk ** 2
        expo = weight_exponent(grid).ravel()
        kernels, radii, projectors = {}, {}, {}
        for a in ells:
            for b in ells:
                kern = fourier_kernel(a, b, grid)
                if self.aperture is None:
                    rad = truncation_radius(kern, self.truncation_tol, self.weight_cap)
                else:
                    rad = self.aperture / grid.w0
                    k_safe = safe_radius(grid, self.weight_cap)
                    if rad > k_safe:
                        raise TruncationError(
                            f"aperture {rad:.4g}/w0 exceeds the safe radius {k_safe:.4g}/w0",
                            safe_radius=k_safe)
                idx = np.flatnonzero(grid.k_radius.ravel() <= rad)
                kernels[a, b], radii[a, b] = kern, rad
                projectors[a, b] = (idx, pref * np.conj(kern.samples.ravel()[idx]) * np.exp(expo[idx]))
        # Projections of each kernel through every integration mask.  Over the
        # whole plane this is the identity; on finite disks it is not, and
        # solving against it removes the truncation bias exactly.
        pairs = [(a, b) for a in ells for b in ells]
        gram = np.array([[kernels[q].samples.ravel()[projectors[p][0]] @ projectors[p][1]
                          for q in pairs] for p in pairs])
        self.grid_ = grid
        self.ells_ = ells
        self.kernels_ = kernels
        self.truncation_radii_ = radii
        self.aperture_gram_ = gram
        self.gram_condition_ = float(np.linalg.cond(gram))
        self._projectors = projectors
        self._pairs = pairs
        return self

    def _images(self, X):
        if isinstance(X, IntensityGrid):
            return X.values[None], True
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], IntensityGrid):
            return np.stack([g.values for g in X]), False
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 2:
            return arr[None], True
        if arr.ndim == 3:
            return arr, False
        raise InvalidArgument(f"expected (M, M) or (n, M, M) images, got shape {arr.shape}")

    def transform(self, X):
        check_is_fitted(self, "kernels_")
        imgs, single = self._images(X)
        if imgs.shape[-2:] != (self.grid_.size, self.grid_.size):
            raise InvalidArgument(f"images are {imgs.shape[-2:]}, reconstructor fitted for {self.grid_.size}")
        ells = self.ells_
        n = len(ells)
        out = np.zeros((len(imgs), n, n), dtype=complex)
        for t, img in enumerate(imgs):
            spectrum = continuous_ft(img, self.grid_).ravel()
            raw = np.array([spectrum[idx] @ vec for idx, vec in (self._projectors[p] for p in self._pairs)])
            if self.gram_correction:
                raw = np.linalg.solve(self.aperture_gram_, raw)
            out[t] = raw.reshape(n, n)
        if self.helicity < 0:
            # the image of |-a><-b| equals that of |b><a|
            out = out.transpose(0, 2, 1)
        out = (out + out.conj().transpose(0, 2, 1)) / 2
        if self.psd_repair:
            out = np.stack([psd_project(m, renormalize=False) for m in out])
        return out[0] if single else out

    def orthogonality_gram(self) -> tuple[list, np.ndarray]:
        """Weighted inner products of every kernel pair, in units of ``1``.

        Returns the pair labels and the Gram matrix; ideally
        ``(2 / (pi w0^2)) * identity``.
        """
        check_is_fitted(self, "kernels_")
        grid = self.grid_
        expo = weight_exponent(grid).ravel()
        pairs = sorted(self.kernels_)
        flat = {p: self.kernels_[p].samples.ravel() for p in pairs}
        gram = np.zeros((len(pairs), len(pairs)), dtype=complex)
        for i, p in enumerate(pairs):
            for j, q in enumerate(pairs[i:], start=i):
                rad = max(self.truncation_radii_[p], self.truncation_radii_[q])
                idx = np.flatnonzero(grid.k_radius.ravel() <= rad)
                val = np.sum(flat[p][idx] * np.conj(flat[q][idx]) * np.exp(expo[idx])) * grid.dk ** 2
                gram[i, j], gram[j, i] = val, np.conj(val)
        return pairs, gram


_reconstructors: dict = {}
_recon_lock = threading.Lock()


def _reconstructor(ell_max, helicity, grid: Grid, **kw) -> AHSTReconstructor:
    key = (ell_max, helicity, grid, tuple(sorted(kw.items())))
    with _recon_lock:
        est = _reconstructors.get(key)
    if est is None:
        est = AHSTReconstructor(ell_max, helicity, grid.w0, grid.size, grid.extent, **kw).fit()
        with _recon_lock:
            _reconstructors[key] = est
    return est


def reconstruct_positive(intensity: IntensityGrid, ell_max: int, **kw) -> np.ndarray:
    """``rho_{a,b}`` for ``1 <= a, b <= ell_max`` from one image."""
    return _reconstructor(ell_max, 1, intensity.grid, **kw).transform(intensity)


def reconstruct_negative(intensity: IntensityGrid, ell_max: int, **kw) -> np.ndarray:
    """``rho_{-a,-b}`` (rows ordered ``-1..-ell_max``) from one image."""
    return _reconstructor(ell_max, -1, intensity.grid, **kw).transform(intensity)

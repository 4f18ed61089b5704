"""Full state tomography: three settings, helicity sorting, AHST on both ports.

A state ``rho`` on modes ``1..L, -1..-L`` is measured under
``U in {1, H_x, H_y}``.  After the full helicity sorter the ``+`` port holds
``mu_k = P+ U rho U^dag P+`` and the ``-`` port ``nu_k = P- U rho U^dag P-``.
Writing ``rho = [[rho+, s], [s^dag, rho-]]``::

    mu_2 = (rho+ + rho- + s + s^dag) / 2
    mu_3 = (rho+ + rho- - i s + i s^dag) / 2

so ``mu_2 - i mu_3 - (1 - i)/2 (mu_1 + nu_1) = s^dag``.  Evolution is
always ``U rho U^dag``; under that convention the combination yields the
adjoint of the cross block, which :func:`assemble_full_density` accounts for.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ahst import AHSTReconstructor, Grid, IntensityGrid, intensity_from_density
from .basis import (
    Basis,
    RailDensity,
    block_assemble,
    BlockDecomposition,
    fidelity,
    format_density,
    make_basis,
    psd_project,
    trace_distance,
)
from .circuits import Circuit, full_helicity_sorter, gate_hx, gate_hy, hx_matrix, hy_matrix
from .exceptions import InvalidArgument

SETTINGS = ("identity", "hx", "hy")
SIGMA_ORIENTATION = "adjoint"  # mu2 - i mu3 - (1-i)/2 (mu1 + nu1) equals sigma^dagger


@dataclass(frozen=True)
class MeasurementSetting:
    label: str
    circuit: Circuit

    @property
    def unitary(self) -> np.ndarray:
        return self.circuit.port_matrix(0, 0)


def measurement_settings(basis: Basis, even_variant: str = "cascade") -> dict[str, MeasurementSetting]:
    return {
        "identity": MeasurementSetting("identity", Circuit([], 1, basis, {"in": 0, "out": 0}, "identity")),
        "hx": MeasurementSetting("hx", gate_hx(basis, even_variant)),
        "hy": MeasurementSetting("hy", gate_hy(basis, even_variant)),
    }


def ideal_unitary(label: str, basis: Basis) -> np.ndarray:
    if label == "identity":
        return np.eye(basis.dim, dtype=complex)
    if label == "hx":
        return hx_matrix(basis)
    if label == "hy":
        return hy_matrix(basis)
    raise InvalidArgument(f"unknown setting {label!r}")


@dataclass(frozen=True)
class MarginalSet:
    mu: tuple  # positive-port marginals for identity, hx, hy
    nu: tuple  # negative-port marginals, rows ordered -1..-L
    provenance: str = "exact"

    @property
    def mu1(self):
        return self.mu[0]

    @property
    def mu2(self):
        return self.mu[1]

    @property
    def mu3(self):
        return self.mu[2]

    @property
    def nu1(self):
        return self.nu[0]

    @property
    def nu2(self):
        return self.nu[1]

    @property
    def nu3(self):
        return self.nu[2]

    def traces(self) -> list[float]:
        return [float(np.trace(m).real + np.trace(n).real) for m, n in zip(self.mu, self.nu)]


def _port_block(rho_out: RailDensity, out_basis: Basis, path: int, modes) -> np.ndarray:
    d = out_basis.dim
    rows = path * d + np.array([out_basis.index(m) for m in modes])
    return rho_out.matrix[np.ix_(rows, rows)].copy()


def simulate_setting(rho_in: RailDensity, setting: MeasurementSetting, fhs: Circuit):
    """Push ``rho_in`` (path 0) through ``U`` then the sorter; return ``(mu, nu)``."""
    basis = rho_in.basis
    if fhs.basis != basis or setting.circuit.basis != basis:
        raise InvalidArgument("state, setting and sorter must share one basis")
    if rho_in.n_paths != 1:
        raise InvalidArgument("input state must occupy a single path")
    d, n = basis.dim, fhs.n_paths
    u_gate = np.eye(n * d, dtype=complex)
    u_gate[:d, :d] = setting.unitary
    total = fhs.unitary @ u_gate
    rho_full = np.zeros((n * d, n * d), dtype=complex)
    rho_full[:d, :d] = rho_in.matrix
    out = RailDensity(fhs.out_basis, n, total @ rho_full @ total.conj().T, physical=False)
    pos = [basis.modes[i] for i in basis.indices("positive")]
    neg = [basis.modes[i] for i in basis.indices("negative")]
    mu = _port_block(out, fhs.out_basis, fhs.ports["+"], pos)
    nu = _port_block(out, fhs.out_basis, fhs.ports["-"], neg)
    return mu, nu


def exact_marginals(rho, basis: Basis) -> MarginalSet:
    """Marginals straight from ``P (U rho U^dag) P`` with the ideal operators."""
    rho = np.asarray(rho, dtype=complex)
    pos, neg = basis.indices("positive"), basis.indices("negative")
    mu, nu = [], []
    for label in SETTINGS:
        u = ideal_unitary(label, basis)
        r = u @ rho @ u.conj().T
        mu.append(r[np.ix_(pos, pos)])
        nu.append(r[np.ix_(neg, neg)])
    return MarginalSet(tuple(mu), tuple(nu), "exact")


def simulated_marginals(rho, basis: Basis, even_variant: str = "cascade",
                        settings: dict | None = None, fhs: Circuit | None = None) -> MarginalSet:
    settings = settings or measurement_settings(basis, even_variant)
    fhs = fhs or full_helicity_sorter(basis, even_variant)
    rho_in = RailDensity(basis, 1, rho, physical=False)
    pairs = [simulate_setting(rho_in, settings[label], fhs) for label in SETTINGS]
    return MarginalSet(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), "exact")


def assemble_full_density(m: MarginalSet, ell_max: int | None = None) -> np.ndarray:
    """Full ``2L x 2L`` density matrix from the six marginals."""
    for name in ("mu", "nu"):
        group = getattr(m, name)
        if len(group) != 3 or any(x is None for x in group):
            raise InvalidArgument(f"marginal set is missing {name} entries")
    mats = [np.asarray(x, dtype=complex) for x in (*m.mu, *m.nu)]
    n = mats[0].shape[0]
    if any(x.shape != (n, n) for x in mats) or (ell_max is not None and n != ell_max):
        raise InvalidArgument("marginals have inconsistent dimensions")
    mu1, mu2, mu3, nu1 = mats[0], mats[1], mats[2], mats[3]
    sigma_adj = mu2 - 1j * mu3 - (1 - 1j) / 2 * (mu1 + nu1)
    rho = block_assemble(BlockDecomposition(mu1, nu1, sigma_adj.conj().T))
    return (rho + rho.conj().T) / 2


# -- AHST measurement ---------------------------------------------------------------

def port_ells(ell_max: int, helicity: int) -> list[int]:
    return [helicity * l for l in range(1, ell_max + 1)]


def port_intensity(port_state, helicity: int, grid: Grid, photons: float | None = None,
                   rng: np.random.Generator | None = None) -> IntensityGrid:
    port_state = np.asarray(port_state, dtype=complex)
    image = intensity_from_density(port_state, grid, port_ells(port_state.shape[0], helicity))
    if photons:
        if rng is None:
            raise InvalidArgument("a random generator is required with photon noise")
        image = image.poisson(photons, rng)
    return image


def measure_marginal_ahst(port_state, helicity: int = 1, grid: Grid | None = None,
                          photons: float | None = None, rng: np.random.Generator | None = None,
                          reconstructor: AHSTReconstructor | None = None, **recon_kw) -> np.ndarray:
    """Synthesize the port image (optionally photon-counted) and reconstruct it.

    ``photons`` is the expected photon number for unit trace, so a port that
    receives probability ``t`` collects ``t * photons`` on average.
    """
    grid = grid or Grid()
    port_state = np.asarray(port_state, dtype=complex)
    ell_max = port_state.shape[0]
    if reconstructor is None:
        reconstructor = AHSTReconstructor(ell_max, helicity, grid.w0, grid.size, grid.extent, **recon_kw).fit()
    return reconstructor.transform(port_intensity(port_state, helicity, grid, photons, rng))


# -- end-to-end ----------------------------------------------------------------------

@dataclass
class QSTConfig:
    ell_max: int = 3
    w0: float = 1.0
    grid_size: int = 512
    extent: float = 8.0
    fhs_variant: str = "cascade"
    photons: float | None = None
    seed: int | None = None
    truncation_tol: float = 1e-10
    aperture: float | None = None
    gram_correction: bool = True
    psd_repair: bool = False

    def __post_init__(self):
        if self.ell_max < 1:
            raise InvalidArgument("ell_max must be >= 1")
        if self.w0 <= 0 or self.extent <= 0 or self.grid_size <= 0:
            raise InvalidArgument("w0, extent and grid size must be positive")
        if self.photons is not None and self.photons <= 0:
            raise InvalidArgument("photon budget must be positive")
        if self.photons and self.seed is None:
            raise InvalidArgument("a seed is required when photon noise is enabled")

    @property
    def grid(self) -> Grid:
        return Grid(self.grid_size, self.extent, self.w0)

    @property
    def basis(self) -> Basis:
        return make_basis(self.ell_max)

    def effective_aperture(self) -> float | None:
        if self.aperture is not None:
            return self.aperture
        return NOISY_APERTURE if self.photons else None


# Common integration radius (units of 1/w0) used with photon noise.  The
# weight amplifies shot noise at large spatial frequency; a small disk plus
# the Gram correction keeps the estimate unbiased while the noise stays low.
NOISY_APERTURE = 1.0


class FullStateTomography(BaseEstimator):
    """Estimate full density matrices from the six port images.

    ``transform`` takes ``(3, 2, M, M)`` or ``(n, 3, 2, M, M)`` arrays:
    settings (identity, hx, hy) by ports (``+``, ``-``).
    """

    def __init__(self, ell_max=3, w0=1.0, grid_size=512, extent=8.0, truncation_tol=1e-10,
                 aperture=None, gram_correction=True, psd_repair=False):
        self.ell_max = ell_max
        self.w0 = w0
        self.grid_size = grid_size
        self.extent = extent
        self.truncation_tol = truncation_tol
        self.aperture = aperture
        self.gram_correction = gram_correction
        self.psd_repair = psd_repair

    def fit(self, X=None, y=None):
        kw = dict(ell_max=self.ell_max, w0=self.w0, grid_size=self.grid_size, extent=self.extent,
                  truncation_tol=self.truncation_tol, aperture=self.aperture,
                  gram_correction=self.gram_correction)
        self.plus_ = AHSTReconstructor(helicity=1, **kw).fit()
        self.minus_ = AHSTReconstructor(helicity=-1, **kw).fit()
        return self

    def marginals(self, images) -> MarginalSet:
        check_is_fitted(self, "plus_")
        images = np.asarray(images, dtype=float)
        if images.shape[:2] != (3, 2):
            raise InvalidArgument(f"expected (3, 2, M, M) images, got {images.shape}")
        mu = tuple(self.plus_.transform(images[k, 0]) for k in range(3))
        nu = tuple(self.minus_.transform(images[k, 1]) for k in range(3))
        return MarginalSet(mu, nu, "ahst-reconstructed")

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 4
        batch = X[None] if single else X
        out = []
        for images in batch:
            rho = assemble_full_density(self.marginals(images), self.ell_max)
            if self.psd_repair:
                rho = psd_project(rho)
            out.append(rho)
        out = np.stack(out)
        return out[0] if single else out


def simulate_images(rho, config: QSTConfig, rng: np.random.Generator | None = None,
                    marginals: MarginalSet | None = None) -> np.ndarray:
    """``(3, 2, M, M)`` port images for ``rho`` under the three settings."""
    basis, grid = config.basis, config.grid
    marginals = marginals or simulated_marginals(rho, basis, config.fhs_variant)
    images = np.empty((3, 2, grid.size, grid.size))
    for k in range(3):
        for j, (state, h) in enumerate(((marginals.mu[k], 1), (marginals.nu[k], -1))):
            images[k, j] = port_intensity(state, h, grid, config.photons, rng).values
    return images


def hash_config(config: dict) -> str:
    """Short stable digest of a flat configuration mapping."""
    text = "\n".join(f"{k}={config[k]!r}" for k in sorted(config))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class TomographyReport:
    rho_reconstructed: np.ndarray
    rho_truth: np.ndarray | None
    fidelity: float | None
    trace_distance: float | None
    psd_repaired: bool
    min_eigenvalue: float
    trace: float
    fidelity_evaluated_on: str
    sigma_orientation: str
    marginals: MarginalSet
    exact_marginals: MarginalSet
    grid_diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hash_config(self.config)

    def to_text(self) -> str:
        basis = make_basis(self.rho_reconstructed.shape[0] // 2)
        head = {
            "config_hash": self.config_hash(),
            **{f"config.{k}": v for k, v in sorted(self.config.items())},
            "fidelity": self.fidelity,
            "trace_distance": self.trace_distance,
            "fidelity_evaluated_on": self.fidelity_evaluated_on,
            "psd_repaired": self.psd_repaired,
            "min_eigenvalue": self.min_eigenvalue,
            "trace": self.trace,
            "sigma_orientation": self.sigma_orientation,
            "marginal_traces": ",".join(f"{t!r}" for t in self.marginals.traces()),
            **{f"grid.{k}": v for k, v in sorted(self.grid_diagnostics.items())},
        }
        lines = [f"{k}={float(v)!r}" if isinstance(v, float) else f"{k}={v}" for k, v in head.items()]
        lines += ["", "[rho_reconstructed]", format_density(self.rho_reconstructed, basis).rstrip()]
        if self.rho_truth is not None:
            lines += ["", "[rho_truth]", format_density(self.rho_truth, basis).rstrip()]
        n = basis.dim // 2
        for name, group, h in (("mu", self.marginals.mu, 1), ("nu", self.marginals.nu, -1)):
            for k, mat in enumerate(group, start=1):
                lines += ["", f"[{name}{k}]", format_density(mat, port_ells(n, h)).rstrip()]
        return "\n".join(lines) + "\n"


def evaluate(rho_reconstructed, rho_truth):
    """Fidelity and trace distance, projecting onto valid states first if needed."""
    rho = np.asarray(rho_reconstructed, dtype=complex)
    lam = np.linalg.eigvalsh(rho)
    tr = float(np.trace(rho).real)
    on = "raw"
    cand = rho / tr if tr > 0 else rho
    if lam.min() < -1e-9 or abs(tr - 1) > 1e-8:
        cand = psd_project(rho)
        on = "psd-projected" if lam.min() < -1e-9 else "trace-normalized"
    return fidelity(rho_truth, cand), trace_distance(rho_truth, cand), on, float(lam.min()), tr


_estimators: dict = {}


def _estimator(config: QSTConfig) -> FullStateTomography:
    key = (config.ell_max, config.w0, config.grid_size, config.extent, config.truncation_tol,
           config.effective_aperture(), config.gram_correction)
    est = _estimators.get(key)
    if est is None:
        est = FullStateTomography(*key).fit()
        _estimators[key] = est
    return est


def run_full_qst(rho_truth, config: QSTConfig | None = None) -> TomographyReport:
    """Simulate all three settings, reconstruct with AHST, assemble and score."""
    config = config or QSTConfig()
    rho_truth = rho_truth.matrix if isinstance(rho_truth, RailDensity) else np.asarray(rho_truth, dtype=complex)
    basis = config.basis
    if rho_truth.shape != (basis.dim, basis.dim):
        raise InvalidArgument(f"state dimension {rho_truth.shape[0]} does not match ell_max={config.ell_max}")
    RailDensity(basis, 1, rho_truth)  # validates the truth state
    rng = np.random.default_rng(config.seed) if config.photons else None
    exact = simulated_marginals(rho_truth, basis, config.fhs_variant)
    images = simulate_images(rho_truth, config, rng, exact)
    est = _estimator(config)
    marg = est.marginals(images)
    rho = assemble_full_density(marg, config.ell_max)
    if config.psd_repair:
        rho = psd_project(rho)
    fid, td, on, lam_min, tr = evaluate(rho, rho_truth)
    radii = list(est.plus_.truncation_radii_.values())
    diag = {
        "truncation_radius_min": float(min(radii)),
        "truncation_radius_max": float(max(radii)),
        "truncation_tol": config.truncation_tol,
        "aperture": config.effective_aperture(),
        "gram_condition": max(est.plus_.gram_condition_, est.minus_.gram_condition_),
        "size": config.grid_size,
        "extent": config.extent,
    }
    return TomographyReport(rho, rho_truth, fid, td, config.psd_repair, lam_min, tr, on,
                            SIGMA_ORIENTATION, marg, exact, diag, asdict(config))


def random_density(dim: int, rank: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Random density matrix ``A A^dag / Tr`` with complex Gaussian ``A`` of the given rank."""
    rng = rng or np.random.default_rng()
    rank = rank or dim
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real

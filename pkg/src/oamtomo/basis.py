"""Truncated OAM Hilbert space: mode labels, bases, rail states and density matrices.

Rail index convention: the amplitude of mode ``i`` on path ``k`` lives at
``k * basis.dim + i``.  Paths are numbered from 0 (path ``a``), 1 (path ``b``),
and so on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import InvalidArgument, PreconditionViolation

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
EIG_TOL = 1e-10


class ModeIndex(NamedTuple):
    ell: int
    p: int = 0

    def __str__(self):
        return f"{self.ell}" if self.p == 0 else f"{self.ell}:{self.p}"

    @classmethod
    def parse(cls, token: str) -> "ModeIndex":
        ell, _, p = token.strip().partition(":")
        return cls(int(ell), int(p) if p else 0)


@dataclass(frozen=True)
class Basis:
    """An ordered list of modes.

    Tomography bases come from :func:`make_basis`; circuit simulation may use
    any ordered set (including ``ell = 0``) built with :meth:`from_range`.
    """

    modes: tuple[ModeIndex, ...]

    def __post_init__(self):
        modes = tuple(ModeIndex(*m) for m in self.modes)
        if len(set(modes)) != len(modes):
            raise InvalidArgument("basis contains repeated modes")
        if any(m.p < 0 for m in modes):
            raise InvalidArgument("radial index p must be non-negative")
        object.__setattr__(self, "modes", modes)

    @classmethod
    def from_range(cls, ell_lo: int, ell_hi: int, p_max: int = 0) -> "Basis":
        """Contiguous ``ell`` range including zero, ordered by ``ell`` then ``p``."""
        if ell_hi < ell_lo:
            raise InvalidArgument("empty ell range")
        return cls(tuple(ModeIndex(l, p) for l in range(ell_lo, ell_hi + 1)
                         for p in range(p_max + 1)))

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    @property
    def dim(self) -> int:
        return len(self.modes)

    @cached_property
    def _lookup(self) -> dict:
        return {m: i for i, m in enumerate(self.modes)}

    def index(self, mode) -> int:
        try:
            return self._lookup[ModeIndex(*mode) if not isinstance(mode, int) else ModeIndex(mode)]
        except KeyError:
            raise InvalidArgument(f"mode {mode} not in basis") from None

    def __contains__(self, mode) -> bool:
        mode = ModeIndex(mode) if isinstance(mode, int) else ModeIndex(*mode)
        return mode in self._lookup

    @cached_property
    def ells(self) -> np.ndarray:
        return np.array([m.ell for m in self.modes], dtype=int)

    @cached_property
    def ps(self) -> np.ndarray:
        return np.array([m.p for m in self.modes], dtype=int)

    @property
    def ell_max(self) -> int:
        return int(np.abs(self.ells).max()) if self.dim else 0

    @property
    def include_p(self) -> bool:
        return bool(self.ps.any())

    def is_symmetric(self) -> bool:
        """True when every ``(ell, p)`` has its partner ``(-ell, p)``."""
        return all(ModeIndex(-m.ell, m.p) in self._lookup for m in self.modes)

    def indices(self, which: str) -> np.ndarray:
        if which in ("positive", "+"):
            return np.flatnonzero(self.ells > 0)
        if which in ("negative", "-"):
            return np.flatnonzero(self.ells < 0)
        raise InvalidArgument(f"which must be 'positive' or 'negative', got {which!r}")

    def union(self, other: Iterable) -> "Basis":
        extra = [ModeIndex(*m) for m in other if ModeIndex(*m) not in self._lookup]
        return Basis(self.modes + tuple(dict.fromkeys(extra)))

    def shifted(self, k: int) -> "Basis":
        return Basis(tuple(ModeIndex(m.ell + k, m.p) for m in self.modes))

    def label(self) -> str:
        return ",".join(str(m) for m in self.modes)


def make_basis(ell_max: int, include_p: bool = False, p_max: int = 0) -> Basis:
    """Tomography basis ordered ``|1>, ..., |n>, |-1>, ..., |-n>``.

    With ``include_p`` every ``ell`` carries radial indices ``0..p_max``
    (ell-major order).
    """
    if not isinstance(ell_max, (int, np.integer)) or ell_max < 1:
        raise InvalidArgument("ell_max must be >= 1")
    if p_max < 0:
        raise InvalidArgument("p_max must be >= 0")
    radial = range(p_max + 1) if include_p else (0,)
    ells = list(range(1, ell_max + 1)) + [-l for l in range(1, ell_max + 1)]
    return Basis(tuple(ModeIndex(l, p) for l in ells for p in radial))


def _check_square(m: np.ndarray, name="matrix") -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgument(f"{name} must be square, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class RailState:
    basis: Basis
    n_paths: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.n_paths * self.basis.dim:
            raise InvalidArgument(
                f"expected {self.n_paths * self.basis.dim} amplitudes, got {amps.size}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_modes(cls, basis: Basis, coeffs: dict, n_paths: int = 1, path: int = 0):
        """Build ``|path> (x) sum_l c_l |l>`` from a ``{mode: amplitude}`` mapping."""
        amps = np.zeros(n_paths * basis.dim, dtype=complex)
        for mode, c in coeffs.items():
            amps[path * basis.dim + basis.index(mode)] = c
        return cls(basis, n_paths, amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def is_normalized(self) -> bool:
        return abs(self.norm ** 2 - 1) <= TRACE_TOL

    def on_path(self, path: int) -> np.ndarray:
        d = self.basis.dim
        return self.amplitudes[path * d:(path + 1) * d]

    def density(self) -> "RailDensity":
        return RailDensity(self.basis, self.n_paths, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class RailDensity:
    basis: Basis
    n_paths: int
    matrix: np.ndarray
    physical: bool = field(default=True, compare=False)

    def __post_init__(self):
        m = _check_square(np.array(self.matrix, dtype=complex), "density matrix")
        if m.shape[0] != self.n_paths * self.basis.dim:
            raise InvalidArgument(
                f"density matrix side {m.shape[0]} does not match "
                f"{self.n_paths} paths x {self.basis.dim} modes")
        if self.physical:
            check_density(m, hermitian_tol=HERMITIAN_TOL, trace_tol=TRACE_TOL, eig_tol=EIG_TOL)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def on_path(cls, rho_modes, basis: Basis, n_paths: int = 1, path: int = 0) -> "RailDensity":
        """Embed a mode-space density matrix on a single path."""
        rho_modes = _check_square(np.asarray(rho_modes, dtype=complex))
        if rho_modes.shape[0] != basis.dim:
            raise InvalidArgument("mode matrix does not match basis dimension")
        if not 0 <= path < n_paths:
            raise InvalidArgument(f"path {path} out of range for {n_paths} paths")
        full = np.zeros((n_paths * basis.dim,) * 2, dtype=complex)
        s = slice(path * basis.dim, (path + 1) * basis.dim)
        full[s, s] = rho_modes
        return cls(basis, n_paths, full)

    def path_block(self, path: int) -> np.ndarray:
        if not 0 <= path < self.n_paths:
            raise InvalidArgument(f"path {path} out of range for {self.n_paths} paths")
        d = self.basis.dim
        return self.matrix[path * d:(path + 1) * d, path * d:(path + 1) * d]

    def evolve(self, unitary: np.ndarray) -> "RailDensity":
        return RailDensity(self.basis, self.n_paths, unitary @ self.matrix @ unitary.conj().T,
                           physical=False)


def check_density(m, hermitian_tol=1e-8, trace_tol=1e-8, eig_tol=1e-8, name="rho"):
    """Raise :class:`PreconditionViolation` unless ``m`` is a unit-trace PSD Hermitian matrix."""
    m = _check_square(np.asarray(m), name)
    if np.abs(m - m.conj().T).max(initial=0.0) > hermitian_tol:
        raise PreconditionViolation(f"{name} is not Hermitian")
    tr = np.trace(m)
    if abs(tr - 1) > trace_tol:
        raise PreconditionViolation(f"{name} has trace {tr.real:.3g}, expected 1")
    lam = np.linalg.eigvalsh((m + m.conj().T) / 2)
    if lam.min(initial=0.0) < -eig_tol:
        raise PreconditionViolation(f"{name} has negative eigenvalue {lam.min():.3g}")
    return m


def project_subspace(rho: RailDensity, which: str, path: int = 0) -> np.ndarray:
    """``P rho P`` for the positive or negative helicity block of one path.

    The result is not renormalized; its trace is the probability of finding
    the light on that path with that helicity.
    """
    block = rho.path_block(path)
    idx = rho.basis.indices(which)
    return block[np.ix_(idx, idx)].copy()


class BlockDecomposition(NamedTuple):
    rho_plus: np.ndarray
    rho_minus: np.ndarray
    sigma: np.ndarray


def block_decompose(rho) -> BlockDecomposition:
    rho = _check_square(np.asarray(rho))
    n2 = rho.shape[0]
    if n2 % 2:
        raise InvalidArgument(f"block decomposition needs an even dimension, got {n2}")
    n = n2 // 2
    return BlockDecomposition(rho[:n, :n].copy(), rho[n:, n:].copy(), rho[:n, n:].copy())


def block_assemble(b: BlockDecomposition) -> np.ndarray:
    """Inverse of :func:`block_decompose`; the lower-left block is ``sigma^dagger``."""
    return np.block([[b.rho_plus, b.sigma], [b.sigma.conj().T, b.rho_minus]])


def _clip_roundoff(lam: np.ndarray) -> np.ndarray:
    # eigenvalues at round-off level would contribute sqrt(1e-16) ~ 1e-8 each
    floor = 64 * np.finfo(float).eps * max(float(np.abs(lam).max(initial=0.0)), 1e-300)
    return np.where(lam > floor, lam, 0.0)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh((m + m.conj().T) / 2)
    return (vec * np.sqrt(_clip_roundoff(lam))) @ vec.conj().T


def fidelity(rho, sigma, tol: float = 1e-8) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``."""
    rho = check_density(rho, tol, tol, tol, "rho")
    sigma = check_density(sigma, tol, tol, tol, "sigma")
    if rho.shape != sigma.shape:
        raise InvalidArgument("fidelity arguments differ in shape")
    s = _psd_sqrt(rho)
    lam = np.linalg.eigvalsh(s @ sigma @ s)
    f = float(np.sum(np.sqrt(_clip_roundoff(lam))) ** 2)
    return min(max(f, 0.0), 1.0)


def trace_distance(rho, sigma, tol: float = 1e-8) -> float:
    rho = check_density(rho, tol, tol, tol, "rho")
    sigma = check_density(sigma, tol, tol, tol, "sigma")
    d = 0.5 * float(np.abs(np.linalg.eigvalsh(rho - sigma)).sum())
    return min(max(d, 0.0), 1.0)


def psd_project(m, renormalize: bool = True) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (eigenvalue clamping), optionally unit trace."""
    m = _check_square(np.asarray(m, dtype=complex))
    h = (m + m.conj().T) / 2
    lam, vec = np.linalg.eigh(h)
    out = (vec * np.clip(lam, 0, None)) @ vec.conj().T
    tr = np.trace(out).real
    if renormalize and tr > 0:
        out = out / tr
    return out


# -- text serialization -------------------------------------------------------

def format_density(matrix, basis: Basis | Sequence | None = None) -> str:
    """``dim=<n> ordering=<ell list>`` header, then one row per line of ``re,im`` pairs."""
    m = _check_square(np.asarray(matrix, dtype=complex))
    n = m.shape[0]
    if basis is None:
        ordering = "-"
    else:
        modes = basis.modes if isinstance(basis, Basis) else [ModeIndex(*b) if not isinstance(b, int) else ModeIndex(b) for b in basis]
        if len(modes) != n:
            raise InvalidArgument("ordering length does not match matrix")
        ordering = ",".join(str(x) for x in modes)
    lines = [f"dim={n} ordering={ordering}"]
    for row in m:
        lines.append(",".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
    return "\n".join(lines) + "\n"


def parse_density(text: str) -> tuple[np.ndarray, Basis | None]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise InvalidArgument("empty density-matrix text")
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    try:
        n = int(header["dim"])
    except (KeyError, ValueError):
        raise InvalidArgument(f"bad density header: {lines[0]!r}") from None
    rows = lines[1:1 + n]
    if len(rows) != n:
        raise InvalidArgument(f"expected {n} rows, found {len(rows)}")
    m = np.empty((n, n), dtype=complex)
    for i, row in enumerate(rows):
        vals = [float(v) for v in row.split(",")]
        if len(vals) != 2 * n:
            raise InvalidArgument(f"row {i} has {len(vals)} numbers, expected {2 * n}")
        m[i] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    ordering = header.get("ordering", "-")
    basis = None if ordering == "-" else Basis(tuple(ModeIndex.parse(t) for t in ordering.split(",")))
    return m, basis


def write_density(path, matrix, basis=None) -> None:
    Path(path).write_text(format_density(matrix, basis))


def read_density(path) -> tuple[np.ndarray, Basis | None]:
    return parse_density(Path(path).read_text())

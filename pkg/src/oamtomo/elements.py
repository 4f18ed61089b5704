"""Ideal linear-optical elements acting on the rail (path x mode) basis.

An :class:`OpticalElement` is a small record (kind, parameters, paths).  Its
matrix is built on demand for a given mode basis and path count, which is
what lets a circuit thread a basis that grows under SLM shifts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .basis import Basis, ModeIndex
from .exceptions import CapacityError, InvalidArgument

KINDS = ("DovePrism", "DovePrismPair", "BalancedBeamSplitter", "GouyStack",
         "SlmShift", "PhasePlate", "PathSwap")

_PARAM = {
    "DovePrism": "beta",
    "DovePrismPair": "beta",
    "GouyStack": "alpha",
    "SlmShift": "k",
    "PhasePlate": "theta",
}

_COST = {"DovePrismPair": 2, "GouyStack": 3}

_TWO_PATH = ("BalancedBeamSplitter", "PathSwap")


def _embed_on_path(block: np.ndarray, path: int, n_paths: int, dim: int) -> np.ndarray:
    """Identity on every path except ``path``, where ``block`` acts on the modes."""
    full = np.eye(n_paths * dim, dtype=complex)
    s = slice(path * dim, (path + 1) * dim)
    full[s, s] = block
    return full


@dataclass(frozen=True)
class OpticalElement:
    """One element of a netlist.

    ``value`` is the element's single parameter (angle in radians, or the
    SLM shift in OAM units); it is ``None`` for beam splitters and swaps.
    ``basis``/``n_paths`` bind the element to a mode space so that
    :attr:`matrix` is available; unbound elements can still be composed
    into circuits, which bind them as they go.
    """

    kind: str
    value: float | int | None
    paths: tuple[int, ...]
    basis: Basis | None = None
    n_paths: int = 2
    widen: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown element kind {self.kind!r}")
        npaths = 2 if self.kind in _TWO_PATH else 1
        if len(self.paths) != npaths:
            raise InvalidArgument(f"{self.kind} acts on {npaths} path(s), got {self.paths}")
        if npaths == 2 and self.paths[0] == self.paths[1]:
            raise InvalidArgument(f"{self.kind} needs two distinct paths")
        if self.kind == "SlmShift" and (not isinstance(self.value, (int, np.integer)) or self.value == 0):
            raise InvalidArgument("SLM shift must be a non-zero integer number of OAM units")

    @property
    def cost(self) -> int:
        return _COST.get(self.kind, 1)

    def bind(self, basis: Basis, n_paths: int) -> "OpticalElement":
        return OpticalElement(self.kind, self.value, self.paths, basis, n_paths, self.widen)

    def remap(self, path_map) -> "OpticalElement":
        return OpticalElement(self.kind, self.value, tuple(path_map[p] for p in self.paths),
                              None, self.n_paths, self.widen)

    def inverse(self) -> "OpticalElement":
        """The element seen by light travelling backwards through it."""
        value = self.value
        if self.kind in ("DovePrismPair", "PhasePlate"):
            value = -value
        elif self.kind == "GouyStack":
            # (|l|+2p+1) is an integer, so a Gouy phase of 2*pi - alpha undoes alpha.
            value = (2 * math.pi - value) % (2 * math.pi)
        elif self.kind == "SlmShift":
            value = -value
        return OpticalElement(self.kind, value, self.paths, None, self.n_paths, self.widen)

    def output_basis(self, basis: Basis) -> Basis:
        if self.kind != "SlmShift":
            return basis
        shifted = basis.shifted(self.value)
        missing = [m for m in shifted if m not in basis]
        if missing and not self.widen:
            raise CapacityError(
                f"SLM shift by {self.value:+d} leaves the fixed basis (needs {missing[0]})")
        return basis.union(shifted)

    def matrix_for(self, basis: Basis, n_paths: int) -> np.ndarray:
        """Matrix from ``n_paths x basis`` to ``n_paths x output_basis(basis)``."""
        for p in self.paths:
            if not 0 <= p < n_paths:
                raise InvalidArgument(f"path {p} out of range for {n_paths} paths")
        d = basis.dim
        ells, ps = basis.ells, basis.ps
        kind, v = self.kind, self.value

        if kind == "DovePrism":
            if not basis.is_symmetric():
                raise InvalidArgument("Dove prism needs a basis symmetric under ell -> -ell")
            block = np.zeros((d, d), dtype=complex)
            for i, m in enumerate(basis.modes):
                block[basis.index((-m.ell, m.p)), i] = np.exp(2j * m.ell * v)
            return _embed_on_path(block, self.paths[0], n_paths, d)
        if kind == "DovePrismPair":
            return _embed_on_path(np.diag(np.exp(2j * ells * v)), self.paths[0], n_paths, d)
        if kind == "GouyStack":
            order = np.abs(ells) + 2 * ps + 1
            return _embed_on_path(np.diag(np.exp(1j * order * v)), self.paths[0], n_paths, d)
        if kind == "PhasePlate":
            return _embed_on_path(np.exp(1j * v) * np.eye(d), self.paths[0], n_paths, d)
        if kind in _TWO_PATH:
            a, b = self.paths
            if kind == "BalancedBeamSplitter":
                s = 1 / math.sqrt(2)
                two = np.array([[s, s], [s, -s]])
            else:
                two = np.array([[0.0, 1.0], [1.0, 0.0]])
            full = np.eye(n_paths * d, dtype=complex)
            ia, ib = slice(a * d, (a + 1) * d), slice(b * d, (b + 1) * d)
            eye = np.eye(d)
            full[ia, ia] = two[0, 0] * eye
            full[ia, ib] = two[0, 1] * eye
            full[ib, ia] = two[1, 0] * eye
            full[ib, ib] = two[1, 1] * eye
            return full
        # SlmShift: isometry into the widened basis
        out = self.output_basis(basis)
        do = out.dim
        iso = np.zeros((n_paths * do, n_paths * d), dtype=complex)
        for path in range(n_paths):
            for i, m in enumerate(basis.modes):
                target = ModeIndex(m.ell + v, m.p) if path == self.paths[0] else m
                iso[path * do + out.index(target), path * d + i] = 1.0
        return iso

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.basis is None:
            raise InvalidArgument("element is not bound to a basis")
        m = self.matrix_for(self.basis, self.n_paths)
        m.setflags(write=False)
        return m

    @cached_property
    def out_basis(self) -> Basis:
        if self.basis is None:
            raise InvalidArgument("element is not bound to a basis")
        return self.output_basis(self.basis)

    def netlist_line(self) -> str:
        parts = [self.kind]
        if self.kind in _PARAM:
            val = int(self.value) if self.kind == "SlmShift" else float(self.value)
            parts.append(f"{_PARAM[self.kind]}={val!r}")
        parts.append(f"path={self.paths[0]}")
        if len(self.paths) == 2:
            parts.append(f"path2={self.paths[1]}")
        return " ".join(parts)

    @classmethod
    def from_netlist_line(cls, line: str) -> "OpticalElement":
        tokens = line.split()
        if not tokens:
            raise InvalidArgument("empty netlist line")
        kind, fields = tokens[0], {}
        for tok in tokens[1:]:
            key, sep, val = tok.partition("=")
            if not sep:
                raise InvalidArgument(f"malformed token {tok!r} in netlist line {line!r}")
            fields[key] = val
        if kind not in KINDS:
            raise InvalidArgument(f"unknown element kind {kind!r}")
        value = None
        if kind in _PARAM:
            raw = fields.get(_PARAM[kind])
            if raw is None:
                raise InvalidArgument(f"{kind} needs {_PARAM[kind]}=")
            value = int(raw) if kind == "SlmShift" else float(raw)
        paths = (int(fields["path"]),) + ((int(fields["path2"]),) if "path2" in fields else ())
        return cls(kind, value, paths)


# -- constructors ---------------------------------------------------------------

def dove_prism(beta: float, path: int = 0, basis: Basis | None = None, n_paths: int = 2) -> OpticalElement:
    """Rotated Dove prism: ``|l> -> exp(2i l beta) |-l>`` on one path."""
    el = OpticalElement("DovePrism", float(beta), (path,), basis, n_paths)
    if basis is not None and not basis.is_symmetric():
        raise InvalidArgument("Dove prism needs a basis symmetric under ell -> -ell")
    return el


def dove_prism_pair(relative_angle: float, path: int = 0, basis: Basis | None = None,
                    n_paths: int = 2) -> OpticalElement:
    """Two Dove prisms at a relative angle: ``|l> -> exp(2i l beta) |l>``."""
    return OpticalElement("DovePrismPair", float(relative_angle), (path,), basis, n_paths)


def gouy_stack(alpha: float, path: int = 0, basis: Basis | None = None, n_paths: int = 2) -> OpticalElement:
    """Three-lens Gouy phase section: ``|l,p> -> exp(i(|l|+2p+1) alpha) |l,p>``."""
    return OpticalElement("GouyStack", float(alpha), (path,), basis, n_paths)


def beam_splitter(path_a: int = 0, path_b: int = 1, basis: Basis | None = None,
                  n_paths: int = 2) -> OpticalElement:
    """Balanced splitter: ``|a> -> (|a>+|b>)/sqrt2``, ``|b> -> (|a>-|b>)/sqrt2``."""
    return OpticalElement("BalancedBeamSplitter", None, (path_a, path_b), basis, n_paths)


def slm_shift(k: int, path: int = 0, basis: Basis | None = None, n_paths: int = 2,
              widen: bool = True) -> OpticalElement:
    """Spiral phase mask adding ``k`` units of OAM.

    The output basis is the input basis widened by the shifted modes; with
    ``widen=False`` a shift that leaves the basis raises :class:`CapacityError`.
    """
    el = OpticalElement("SlmShift", int(k), (path,), basis, n_paths, widen)
    if basis is not None:
        el.output_basis(basis)
    return el


def phase_plate(theta: float, path: int = 0, basis: Basis | None = None, n_paths: int = 2) -> OpticalElement:
    return OpticalElement("PhasePlate", float(theta), (path,), basis, n_paths)


def path_swap(path_a: int = 0, path_b: int = 1, basis: Basis | None = None, n_paths: int = 2) -> OpticalElement:
    return OpticalElement("PathSwap", None, (path_a, path_b), basis, n_paths)

"""Interferometric devices assembled from :mod:`oamtomo.elements`.

Every device here is a chain of Mach-Zehnder stages.  A stage on paths
``(x, y)`` is ``BBS(x, y)``, the arm elements on ``y``, then ``BBS(x, y)``
again.  With arm phase ``theta`` a mode entering on ``x`` leaves with weight
``(1 + e^{i theta})/2`` on ``x`` and ``(1 - e^{i theta})/2`` on ``y``, so
``theta = 0 mod 2pi`` passes straight through and ``theta = pi mod 2pi``
swaps paths, both with amplitude exactly ``+1``.

The full helicity sorter is used in both directions.  Running it backwards
(reversed element order, each element inverted) recombines a positive beam
on its ``+`` port and a negative beam on its ``-`` port into path 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .basis import Basis, ModeIndex, make_basis
from .elements import (
    OpticalElement,
    beam_splitter,
    dove_prism,
    dove_prism_pair,
    gouy_stack,
    phase_plate,
    slm_shift,
)
from .exceptions import CapacityError, InvalidArgument

PI = math.pi
ROUTE_TOL = 1e-12


class Route(NamedTuple):
    path: int
    mode: ModeIndex
    amplitude: complex


class Circuit:
    """An ordered list of elements with its composed matrix.

    ``unitary`` maps ``n_paths x basis`` to ``n_paths x out_basis``.  After
    SLM shifts the output basis is pruned back to the input basis whenever no
    light can reach the extra modes, so closed devices end up square.
    """

    def __init__(self, elements: Iterable[OpticalElement], n_paths: int, basis: Basis,
                 ports: dict | None = None, name: str = "circuit"):
        self.n_paths = int(n_paths)
        self.basis = basis
        self.name = name
        self.ports = dict(ports or {})
        bound, current = [], basis
        u = np.eye(self.n_paths * basis.dim, dtype=complex)
        for el in elements:
            el = el.bind(current, self.n_paths)
            u = el.matrix @ u
            current = el.out_basis
            if el.kind == "SlmShift" and basis.is_symmetric() and not current.is_symmetric():
                u, current = _mirror_extend(u, current, self.n_paths)
            bound.append(el)
        self.elements = tuple(bound)
        self.unitary, self.out_basis = _prune(u, basis, current, self.n_paths)
        self.unitary.setflags(write=False)
        self.total_cost = sum(el.cost for el in self.elements)
        self.global_phase = 0.0

    def __repr__(self):
        return (f"Circuit({self.name!r}, n_paths={self.n_paths}, dim={self.basis.dim}, "
                f"elements={len(self.elements)}, cost={self.total_cost})")

    @property
    def is_square(self) -> bool:
        return self.out_basis == self.basis

    def then(self, other: "Circuit", name: str | None = None) -> "Circuit":
        """``self`` followed by ``other`` (same path count and input basis)."""
        if other.n_paths != self.n_paths:
            raise InvalidArgument("cannot chain circuits with different path counts")
        return Circuit(self.elements + other.elements, self.n_paths, self.basis,
                       other.ports or self.ports, name or f"{self.name}+{other.name}")

    def reversed(self, name: str | None = None) -> "Circuit":
        """The same device traversed from its outputs back to its inputs."""
        els = [el.inverse() for el in reversed(self.elements)]
        return Circuit(els, self.n_paths, self.out_basis, self.ports, name or f"{self.name}^-1")

    def embed(self, path_map, n_paths: int, ports: dict | None = None) -> "Circuit":
        return Circuit([el.remap(path_map) for el in self.elements], n_paths, self.basis,
                       ports if ports is not None else {k: path_map[v] for k, v in self.ports.items()},
                       self.name)

    def port_matrix(self, in_path: int = 0, out_path: int = 0) -> np.ndarray:
        """Mode-space block from ``in_path`` to ``out_path``, both in the input basis.

        Amplitude sent to modes outside the input basis is not included;
        :meth:`leakage` accounts for it.
        """
        d, do = self.basis.dim, self.out_basis.dim
        rows = out_path * do + np.array([self.out_basis.index(m) for m in self.basis.modes])
        return self.unitary[rows, in_path * d:(in_path + 1) * d].copy()

    def leakage(self, in_path: int = 0, out_path: int = 0) -> float:
        """Largest probability that light from ``in_path`` ends up off ``out_path``."""
        d = self.basis.dim
        cols = self.unitary[:, in_path * d:(in_path + 1) * d]
        kept = self.port_matrix(in_path, out_path)
        return float((np.sum(np.abs(cols) ** 2, axis=0) - np.sum(np.abs(kept) ** 2, axis=0)).max())

    def port_name(self, path: int) -> str:
        for name, p in self.ports.items():
            if p == path:
                return name
        return str(path)


def _mirror_extend(u: np.ndarray, current: Basis, n_paths: int):
    """Append empty mirror partners so Dove prisms stay defined after an SLM shift."""
    wider = current.union(ModeIndex(-m.ell, m.p) for m in current.modes)
    d, dw = current.dim, wider.dim
    out = np.zeros((n_paths * dw, u.shape[1]), dtype=u.dtype)
    for p in range(n_paths):
        out[p * dw:p * dw + d] = u[p * d:(p + 1) * d]
    return out, wider


def _prune(u: np.ndarray, basis: Basis, current: Basis, n_paths: int):
    if current == basis:
        return u, basis
    do = current.dim
    rows = np.abs(u).reshape(n_paths, do, -1).max(axis=(0, 2))
    keep = [m for m in current.modes if m not in basis and rows[current.index(m)] > ROUTE_TOL]
    if basis.is_symmetric():
        # Dove prisms downstream need the mirror partner of every reachable mode.
        keep += [ModeIndex(-m.ell, m.p) for m in keep]
    out = Basis(basis.modes + tuple(dict.fromkeys(m for m in keep if m not in basis)))
    pruned = np.zeros((n_paths * out.dim, u.shape[1]), dtype=u.dtype)
    for j, m in enumerate(out.modes):
        if m in current:
            i = current.index(m)
            pruned[j::out.dim] = u[i::do]
    return pruned, out


# -- routing --------------------------------------------------------------------

@dataclass
class PortRoutingTable:
    circuit_name: str
    ports: dict
    rows: dict = field(default_factory=dict)  # (in_path, ModeIndex) -> [Route]

    def outputs(self, in_path: int, mode) -> list[Route]:
        return self.rows[(in_path, ModeIndex(mode) if isinstance(mode, int) else ModeIndex(*mode))]

    def port_of(self, mode, in_path: int = 0, tol: float = 1e-12) -> str | None:
        """Name of the single port carrying ``mode``, or ``None`` if it is split."""
        routes = [r for r in self.outputs(in_path, mode) if abs(r.amplitude) > tol]
        paths = {r.path for r in routes}
        if len(paths) != 1:
            return None
        path = paths.pop()
        return next((k for k, v in self.ports.items() if v == path), str(path))

    def norms(self) -> dict:
        return {key: sum(abs(r.amplitude) ** 2 for r in routes) for key, routes in self.rows.items()}

    def to_text(self, csv: bool = False) -> str:
        names = {v: k for k, v in self.ports.items()}
        header = ("in_path", "in_mode", "out_port", "out_mode", "re", "im", "abs")
        lines = []
        for (ip, mode), routes in sorted(self.rows.items(), key=lambda kv: (kv[0][0], kv[0][1].ell, kv[0][1].p)):
            for r in routes:
                lines.append((str(ip), str(mode), names.get(r.path, str(r.path)), str(r.mode),
                              f"{r.amplitude.real:.12g}", f"{r.amplitude.imag:.12g}",
                              f"{abs(r.amplitude):.12g}"))
        if csv:
            return "\n".join(",".join(row) for row in [header, *lines]) + "\n"
        widths = [max(len(row[i]) for row in [header, *lines]) for i in range(len(header))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in [header, *lines]) + "\n"


def routing_table(c: Circuit, in_paths: Iterable[int] = (0,), tol: float = ROUTE_TOL) -> PortRoutingTable:
    table = PortRoutingTable(c.name, dict(c.ports))
    d, do = c.basis.dim, c.out_basis.dim
    for ip in in_paths:
        for i, mode in enumerate(c.basis.modes):
            col = c.unitary[:, ip * d + i]
            routes = []
            for j in np.flatnonzero(np.abs(col) > tol):
                path, k = divmod(int(j), do)
                routes.append(Route(path, c.out_basis.modes[k], complex(col[j])))
            table.rows[(ip, mode)] = routes
    return table


def element_count(c: Circuit) -> int:
    return c.total_cost


def phase_ledger(c: Circuit, in_path: int = 0, tol: float = 1e-9) -> dict:
    """Phase (radians) imprinted on each mode that exits a single port unsplit."""
    ledger = {}
    for (ip, mode), routes in routing_table(c, (in_path,)).rows.items():
        if len(routes) == 1 and abs(abs(routes[0].amplitude) - 1) < tol:
            ledger[mode] = float(np.angle(routes[0].amplitude))
    return ledger


# -- devices --------------------------------------------------------------------

def _mzi(x: int, y: int, arm: list[OpticalElement]) -> list[OpticalElement]:
    return [beam_splitter(x, y), *[a.remap({0: y}) for a in arm], beam_splitter(x, y)]


def _check_p0(basis: Basis):
    if basis.include_p:
        raise InvalidArgument("this device is defined on p = 0 modes only")


def _oam_sorter_arm(beta):
    return [dove_prism_pair(beta, 0)]


def _helicity_arm(alpha):
    # Gouy (|l|+1)alpha, minus the constant alpha, plus l*alpha from the prism pair.
    return [gouy_stack(alpha, 0), phase_plate(-alpha, 0), dove_prism_pair(alpha / 2, 0)]


def oam_sorter(beta: float, basis: Basis) -> Circuit:
    """Mach-Zehnder with a Dove-prism pair: arm phase ``2 l beta``."""
    return Circuit(_mzi(0, 1, _oam_sorter_arm(beta)), 2, basis, {"a": 0, "b": 1}, f"oam_sorter({beta:g})")


def radial_mode_sorter(alpha: float, basis: Basis) -> Circuit:
    """Mach-Zehnder with a Gouy stack: arm phase ``(|l| + 2p) alpha`` after compensation."""
    if not basis.include_p:
        raise InvalidArgument("radial mode sorter needs a basis with radial indices")
    arm = [gouy_stack(alpha, 0), phase_plate(-alpha, 0)]
    return Circuit(_mzi(0, 1, arm), 2, basis, {"a": 0, "b": 1}, f"radial_mode_sorter({alpha:g})")


def partial_helicity_sorter(alpha: float, basis: Basis) -> Circuit:
    """``HS(alpha)``: arm phase ``(|l| + l) alpha``, which is zero for every negative mode."""
    _check_p0(basis)
    return Circuit(_mzi(0, 1, _helicity_arm(alpha)), 2, basis, {"a": 0, "b": 1}, f"HS({alpha:g})")


def hs_odd(basis: Basis) -> Circuit:
    _check_p0(basis)
    return Circuit(_mzi(0, 1, _helicity_arm(PI / 2)), 2, basis, {"+": 1, "-": 0}, "HS_odd")


def _hs_even_slm_elements(a: int, b: int, widen: bool = True) -> list[OpticalElement]:
    return [slm_shift(+1, a, widen=widen), *_mzi(a, b, _helicity_arm(PI / 2)),
            slm_shift(-1, a, widen=widen), slm_shift(-1, b, widen=widen)]


def hs_even_slm(basis: Basis, widen: bool = True) -> Circuit:
    """Even-mode helicity sorter: shift by +1, sort odd modes, shift back on both ports."""
    _check_p0(basis)
    try:
        return Circuit(_hs_even_slm_elements(0, 1, widen), 2, basis, {"+": 1, "-": 0}, "HS_even_slm")
    except CapacityError as exc:
        raise CapacityError(f"HS_even (SLM) needs a basis widened by one unit: {exc}") from None


def cascade_depth(ell_max: int) -> int:
    """Smallest ``N >= 2`` with ``ell_max < 2**N``."""
    n = 2
    while ell_max >= 2 ** n:
        n += 1
    return n


def _hs_even_cascade_elements(n: int, main: int, branch: list[int]) -> list[OpticalElement]:
    """``branch`` lists paths ``b_1 .. b_N``; the positive stream collects on ``b_N``."""
    els = []
    for k in range(1, n):
        els += _mzi(main, branch[k - 1], _helicity_arm(PI / 2 ** (k + 1)))
    sink = branch[n - 1]
    for k in range(n - 1, 0, -1):
        els += _mzi(sink, branch[k - 1], _oam_sorter_arm(PI / 2 ** (k + 1)))
    return els


def hs_even_cascade(n: int, basis: Basis) -> Circuit:
    """Even-mode helicity sorter from ``N-1`` partial sorters and ``N-1`` OAM sorters.

    Filter ``k`` is ``HS(pi/2**(k+1))`` and peels positive modes
    ``l = 2**k * odd`` onto branch ``b_k``.  Recombiner ``k`` is an OAM sorter
    with ``beta = pi/2**(k+1)`` that swaps ``b_k`` into the collecting path
    ``b_N`` while leaving modes divisible by ``2**(k+1)`` in place.
    Paths: 0 is the input and the ``-`` port, ``N`` is the ``+`` port.
    """
    _check_p0(basis)
    if n < 2:
        raise InvalidArgument("cascade depth N must be >= 2")
    if np.any(basis.ells % 2):
        raise InvalidArgument("cascade helicity sorter accepts even modes only")
    if basis.ell_max >= 2 ** n:
        raise CapacityError(f"ell_max={basis.ell_max} needs N >= {cascade_depth(basis.ell_max)}, got N={n}")
    return Circuit(_hs_even_cascade_elements(n, 0, list(range(1, n + 1))), n + 1, basis,
                   {"+": n, "-": 0}, f"HS_even_cascade(N={n})")


def hs_even_element_count(n: int, variant: str = "cascade") -> int:
    """Element count of the even-mode sorter able to handle ``|l| < 2**n``."""
    if n < 2:
        raise InvalidArgument("cascade depth N must be >= 2")
    if variant == "cascade":
        els = _hs_even_cascade_elements(n, 0, list(range(1, n + 1)))
    elif variant == "slm":
        els = _hs_even_slm_elements(0, 1)
    else:
        raise InvalidArgument(f"variant must be 'slm' or 'cascade', got {variant!r}")
    return sum(el.cost for el in els)


def full_helicity_sorter(basis: Basis, even_variant: str = "cascade") -> Circuit:
    """FHS: even/odd split, per-parity helicity sorters, parity recombination.

    Path 0 is the input and the ``-`` port.  Path 1 carries odd modes,
    path 2 odd positive modes, and paths from 3 up belong to the even
    branch, whose positive output is the ``+`` port.
    """
    _check_p0(basis)
    els = _mzi(0, 1, _oam_sorter_arm(PI / 2))
    els += _mzi(1, 2, _helicity_arm(PI / 2))
    if even_variant == "slm":
        plus = 3
        els += _hs_even_slm_elements(0, plus)
        n_paths = 4
    elif even_variant == "cascade":
        even_max = max([abs(int(l)) for l in basis.ells if l % 2 == 0] + [0])
        n = cascade_depth(even_max)
        branch = list(range(3, 3 + n))
        els += _hs_even_cascade_elements(n, 0, branch)
        plus = branch[-1]
        n_paths = 3 + n
    else:
        raise InvalidArgument(f"even_variant must be 'slm' or 'cascade', got {even_variant!r}")
    els += _mzi(plus, 2, _oam_sorter_arm(PI / 2))
    els += _mzi(0, 1, _oam_sorter_arm(PI / 2))
    return Circuit(els, n_paths, basis, {"+": plus, "-": 0}, f"FHS[{even_variant}]")


def _symmetric_p0(basis: Basis):
    _check_p0(basis)
    if not basis.is_symmetric():
        raise InvalidArgument("gate needs a basis symmetric under ell -> -ell")


def _sandwich(fhs: Circuit, middle: list[OpticalElement], name: str) -> Circuit:
    back = fhs.reversed()
    c = Circuit(list(fhs.elements) + middle + list(back.elements), fhs.n_paths, fhs.basis,
                {"in": 0, "out": 0}, name)
    return c


def _hx_middle(plus: int, minus: int) -> list[OpticalElement]:
    # flip the positive beam, mix, flip the sum beam back to positive helicity
    return [dove_prism(0.0, plus), beam_splitter(plus, minus), dove_prism(0.0, plus)]


def gate_hx(basis: Basis, even_variant: str = "cascade") -> Circuit:
    """Hadamard between every ``|+l>``, ``|-l>`` pair, in and out on path 0."""
    _symmetric_p0(basis)
    fhs = full_helicity_sorter(basis, even_variant)
    c = _sandwich(fhs, _hx_middle(fhs.ports["+"], fhs.ports["-"]), "H_x")
    return _record_global_phase(c, hx_matrix(basis))


def gate_phase(theta: float, basis: Basis, even_variant: str = "cascade") -> Circuit:
    """``P(theta)``: phase ``theta`` on negative modes only."""
    _check_p0(basis)
    fhs = full_helicity_sorter(basis, even_variant)
    c = _sandwich(fhs, [phase_plate(theta, fhs.ports["-"])], f"P({theta:g})")
    return _record_global_phase(c, phase_matrix(theta, basis))


def gate_hy(basis: Basis, even_variant: str = "cascade") -> Circuit:
    """``P(pi/2) H_x P(pi/2)`` with the two inner sorter passes cancelled."""
    _symmetric_p0(basis)
    fhs = full_helicity_sorter(basis, even_variant)
    plus, minus = fhs.ports["+"], fhs.ports["-"]
    middle = [phase_plate(PI / 2, minus), *_hx_middle(plus, minus), phase_plate(PI / 2, minus)]
    c = _sandwich(fhs, middle, "H_y")
    return _record_global_phase(c, hy_matrix(basis))


def _record_global_phase(c: Circuit, target: np.ndarray) -> Circuit:
    u = c.port_matrix(0, 0)
    overlap = np.trace(target.conj().T @ u)
    c.global_phase = float(np.angle(overlap)) if abs(overlap) > 0 else 0.0
    return c


# -- ideal operators in the canonical tomography ordering ---------------------------

def _pair_blocks(basis: Basis):
    idx = basis.indices("positive")
    partner = np.array([basis.index((-basis.modes[i].ell, basis.modes[i].p)) for i in idx])
    return idx, partner


def hx_matrix(basis: Basis) -> np.ndarray:
    """``(1/sqrt2) [[1, 1], [1, -1]]`` over each ``(+l, -l)`` pair."""
    pos, neg = _pair_blocks(basis)
    m = np.zeros((basis.dim, basis.dim), dtype=complex)
    s = 1 / math.sqrt(2)
    m[pos, pos], m[pos, neg], m[neg, pos], m[neg, neg] = s, s, s, -s
    return m


def hy_matrix(basis: Basis) -> np.ndarray:
    """``(1/sqrt2) [[1, i], [i, 1]]`` over each ``(+l, -l)`` pair."""
    pos, neg = _pair_blocks(basis)
    m = np.zeros((basis.dim, basis.dim), dtype=complex)
    s = 1 / math.sqrt(2)
    m[pos, pos], m[pos, neg], m[neg, pos], m[neg, neg] = s, 1j * s, 1j * s, s
    return m


def phase_matrix(theta: float, basis: Basis) -> np.ndarray:
    return np.diag(np.where(basis.ells < 0, np.exp(1j * theta), 1.0 + 0j))


def sorter_matrix(basis: Basis) -> np.ndarray:
    """The ideal two-path helicity sorter ``S = I (x) P+ + X (x) P-`` on paths (a, b).

    ``ell = 0`` is treated as positive.
    """
    pplus = np.diag((basis.ells >= 0).astype(float))
    pminus = np.diag((basis.ells < 0).astype(float))
    return np.block([[pplus, pminus], [pminus, pplus]]).astype(complex)


# -- netlists -------------------------------------------------------------------

def format_netlist(c: Circuit) -> str:
    ports = ",".join(f"{k}:{v}" for k, v in c.ports.items()) or "-"
    lines = [f"# circuit name={c.name.replace(' ', '_')} n_paths={c.n_paths} "
             f"basis={c.basis.label()} ports={ports}"]
    lines += [el.netlist_line() for el in c.elements]
    return "\n".join(lines) + "\n"


def parse_netlist(text: str) -> Circuit:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise InvalidArgument("netlist must start with a '# circuit ...' header")
    header = dict(tok.split("=", 1) for tok in lines[0].lstrip("#").split()[1:])
    try:
        n_paths = int(header["n_paths"])
        basis = Basis(tuple(ModeIndex.parse(t) for t in header["basis"].split(",")))
    except (KeyError, ValueError) as exc:
        raise InvalidArgument(f"bad netlist header: {exc}") from None
    ports = {}
    if header.get("ports", "-") != "-":
        for tok in header["ports"].split(","):
            k, _, v = tok.rpartition(":")
            ports[k] = int(v)
    els = [OpticalElement.from_netlist_line(ln) for ln in lines[1:] if not ln.startswith("#")]
    return Circuit(els, n_paths, basis, ports, header.get("name", "circuit"))


def save_netlist(c: Circuit, path) -> None:
    Path(path).write_text(format_netlist(c))


def load_netlist(path) -> Circuit:
    return parse_netlist(Path(path).read_text())


def even_basis(ell_max: int) -> Basis:
    """Even modes ``2, 4, ..., -2, -4, ...`` up to ``ell_max`` in tomography order."""
    evens = [l for l in range(2, ell_max + 1, 2)]
    if not evens:
        raise InvalidArgument("ell_max must be >= 2 for an even-mode basis")
    return Basis(tuple(ModeIndex(l) for l in evens + [-l for l in evens]))


__all__ = [
    "Circuit", "PortRoutingTable", "Route", "routing_table", "element_count", "phase_ledger",
    "oam_sorter", "radial_mode_sorter", "partial_helicity_sorter", "hs_odd", "hs_even_slm",
    "hs_even_cascade", "hs_even_element_count", "cascade_depth", "full_helicity_sorter",
    "gate_hx", "gate_phase", "gate_hy",
    "hx_matrix", "hy_matrix", "phase_matrix", "sorter_matrix", "format_netlist", "parse_netlist",
    "save_netlist", "load_netlist", "even_basis", "make_basis",
]

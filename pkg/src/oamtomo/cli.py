"""``oamtomo`` command line: tomography runs, routing tables, scaling tables."""

from __future__ import annotations

import argparse
import math
import os
import re
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import circuits as C
from .ahst import IntensityGrid
from .basis import Basis, format_density, make_basis
from .config import load_config
from .exceptions import OamError
from .tomography import SETTINGS, run_full_qst, simulate_images

EXIT_OK, EXIT_ERROR, EXIT_BELOW = 0, 1, 2
CHECK_TOL = 1e-12

_ANGLE = re.compile(r"([-+]?)(\d+\.?\d*(?:e[-+]?\d+)?|\.\d+)?(pi)?(?:/(\d+\.?\d*))?")


def parse_angle(text: str) -> float:
    """Radians from ``0.5``, ``pi``, ``pi/2``, ``-3pi/4``, ``2*pi/3``."""
    m = _ANGLE.fullmatch(text.strip().lower().replace(" ", "").replace("*", ""))
    if not m or (m.group(2) is None and m.group(3) is None):
        raise argparse.ArgumentTypeError(f"cannot read angle {text!r}")
    sign, coef, pi, den = m.groups()
    value = float(coef) if coef else 1.0
    if pi:
        value *= math.pi
    if den:
        value /= float(den)
    return -value if sign == "-" else value


def atomic_write(path: Path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_ERROR


# -- tomography ----------------------------------------------------------------------

def cmd_tomography(args) -> int:
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(seed=args.seed, grid_size=args.grid, extent=args.extent,
                                 photons=args.photons, out=args.out).validate(source=args.config)
        out = Path(cfg.out or "tomography-out")
        rho_truth = cfg.state.density(cfg.basis())
        qst = cfg.qst_config()
        report = run_full_qst(rho_truth, qst)
        report.config = cfg.canonical()
        tag = f"config_hash={cfg.config_hash()}"
        atomic_write(out / "report.txt", report.to_text())
        for name, mat in (("rho_reconstructed", report.rho_reconstructed), ("rho_truth", rho_truth)):
            atomic_write(out / f"{name}.txt", f"# {tag}\n" + format_density(mat, cfg.basis()))
        if args.images:
            rng = np.random.default_rng(cfg.seed) if cfg.photons else None
            images = simulate_images(rho_truth, qst, rng, report.exact_marginals)
            for k, setting in enumerate(SETTINGS):
                for j, port in enumerate(("plus", "minus")):
                    img = IntensityGrid(images[k, j], qst.grid)
                    stem = out / f"intensity_{setting}_{port}"
                    atomic_write(stem.with_suffix(".csv"), img.to_csv_text([tag]))
                    atomic_write(stem.with_suffix(".pgm"), img.to_pgm_bytes([tag]))
    except (OamError, OSError) as exc:
        return _err(str(exc))
    verdict = "PASS" if report.fidelity >= cfg.threshold else "BELOW THRESHOLD"
    print(f"fidelity={report.fidelity:.6f} trace_distance={report.trace_distance:.3e} "
          f"threshold={cfg.threshold} {verdict} -> {out}")
    return EXIT_OK if report.fidelity >= cfg.threshold else EXIT_BELOW


# -- routing --------------------------------------------------------------------------

def _symmetric(lmax: int, p_max: int = 0) -> Basis:
    return Basis.from_range(-lmax, lmax, p_max)


def _build(name: str, a) -> tuple[C.Circuit, str]:
    """Circuit and the check it should satisfy."""
    if name == "oam-sorter":
        return C.oam_sorter(a.beta, _symmetric(a.lmax)), "parity"
    if name == "radial-sorter":
        return C.radial_mode_sorter(a.alpha, _symmetric(a.lmax, a.pmax)), "unitary"
    if name == "hs":
        return C.partial_helicity_sorter(a.alpha, _symmetric(a.lmax)), "no-negative-in-b"
    if name == "hs-odd":
        return C.hs_odd(_symmetric(a.lmax)), "helicity-odd"
    if name == "hs-even":
        basis = C.even_basis(a.lmax)
        if a.even == "slm":
            return C.hs_even_slm(basis), "helicity"
        return C.hs_even_cascade(C.cascade_depth(basis.ell_max), basis), "helicity"
    if name == "fhs":
        return C.full_helicity_sorter(make_basis(a.lmax), a.even), "helicity"
    if name == "hx":
        return C.gate_hx(make_basis(a.lmax), a.even), "gate"
    if name == "hy":
        return C.gate_hy(make_basis(a.lmax), a.even), "gate"
    if name == "phase":
        return C.gate_phase(a.theta, make_basis(a.lmax), a.even), "gate"
    raise KeyError(name)


CIRCUITS = ("oam-sorter", "radial-sorter", "hs", "hs-odd", "hs-even", "fhs", "hx", "hy", "phase")


def check_circuit(c: C.Circuit, kind: str, a) -> list[str]:
    """Violations of the circuit's sorting invariant (empty when it holds)."""
    problems = []
    table = C.routing_table(c)
    for (ip, mode), norm in table.norms().items():
        if abs(norm - 1) > CHECK_TOL:
            problems.append(f"mode {mode} loses norm: {norm:.3e}")
    if kind == "gate":
        ideal = {"hx": C.hx_matrix, "hy": C.hy_matrix}.get(a.circuit)
        target = ideal(c.basis) if ideal else C.phase_matrix(a.theta, c.basis)
        u = c.port_matrix(0, 0) * np.exp(-1j * c.global_phase)
        if np.abs(u - target).max() > 1e-10:
            problems.append(f"gate deviates from its ideal matrix by {np.abs(u - target).max():.3e}")
        if c.leakage(0, 0) > CHECK_TOL:
            problems.append(f"gate leaks {c.leakage(0, 0):.3e} out of the input path")
        return problems
    for (ip, mode), routes in table.rows.items():
        ell = mode.ell
        if kind == "no-negative-in-b":
            amp = sum(abs(r.amplitude) for r in routes if r.path == c.ports["b"])
            if ell < 0 and amp > CHECK_TOL:
                problems.append(f"negative mode {mode} reaches port b with amplitude {amp:.3e}")
        elif kind == "parity":
            if not math.isclose(math.cos(a.beta) ** 2, 0, abs_tol=1e-12):
                continue
            port = table.port_of(mode)
            if port is None:
                problems.append(f"mode {mode} is split between ports")
        elif kind.startswith("helicity"):
            if ell == 0 or (kind == "helicity-odd" and ell % 2 == 0):
                continue
            want = "+" if ell > 0 else "-"
            if table.port_of(mode) != want:
                problems.append(f"mode {mode} does not exit port {want}")
    if kind == "parity" and not problems and math.isclose(math.cos(a.beta) ** 2, 0, abs_tol=1e-12):
        ports = {ell % 2: set() for ell in (0, 1)}
        for (ip, mode) in table.rows:
            ports[mode.ell % 2].add(table.port_of(mode))
        if any(len(v) != 1 for v in ports.values()) or ports[0] == ports[1]:
            problems.append("even and odd modes are not separated")
    return problems


def cmd_routing(args) -> int:
    if args.circuit not in CIRCUITS:
        return _err(f"unknown circuit {args.circuit!r}; valid names: {', '.join(CIRCUITS)}")
    try:
        circuit, kind = _build(args.circuit, args)
        text = C.routing_table(circuit).to_text(csv=args.csv)
        print(f"# {circuit.name} elements={circuit.total_cost} paths={circuit.n_paths} "
              f"ports={','.join(f'{k}:{v}' for k, v in circuit.ports.items())}")
        sys.stdout.write(text)
        if args.check:
            problems = check_circuit(circuit, kind, args)
            for p in problems:
                print(f"check failed: {p}", file=sys.stderr)
            if problems:
                return EXIT_ERROR
            print("# check passed")
    except OamError as exc:
        return _err(str(exc))
    return EXIT_OK


# -- scaling --------------------------------------------------------------------------

def cmd_scaling(args) -> int:
    if args.nmin < 2 or args.nmax < args.nmin:
        return _err("need 2 <= nmin <= nmax")
    lines = ["N,modes,cascade_elements,slm_elements"]
    for n in range(args.nmin, args.nmax + 1):
        lines.append(f"{n},{2 ** n},{C.hs_even_element_count(n, 'cascade')},"
                     f"{C.hs_even_element_count(n, 'slm')}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oamtomo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tomography", help="run full state tomography from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--grid", type=int, help="grid size M")
    t.add_argument("--extent", type=float, help="grid extent in units of w0")
    t.add_argument("--photons", type=float, help="photon budget per setting")
    t.add_argument("--no-images", dest="images", action="store_false",
                   help="skip the intensity CSV/PGM files")
    t.set_defaults(func=cmd_tomography)

    r = sub.add_parser("routing", help="print a circuit's port routing table")
    r.add_argument("circuit", help=", ".join(CIRCUITS))
    r.add_argument("--alpha", type=parse_angle, default=math.pi / 2)
    r.add_argument("--beta", type=parse_angle, default=math.pi / 2)
    r.add_argument("--theta", type=parse_angle, default=math.pi / 2)
    r.add_argument("--lmax", type=int, default=4)
    r.add_argument("--pmax", type=int, default=1)
    r.add_argument("--even", choices=("cascade", "slm"), default="cascade")
    r.add_argument("--check", action="store_true", help="exit 1 if the sorting invariant fails")
    r.add_argument("--csv", action="store_true")
    r.set_defaults(func=cmd_routing)

    s = sub.add_parser("scaling", help="element counts of the even-mode sorters")
    s.add_argument("--nmin", type=int, default=2)
    s.add_argument("--nmax", type=int, default=8)
    s.set_defaults(func=cmd_scaling)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configuration: sectioned ``key = value`` files.

Example::

    [basis]
    ell_max = 3

    [grid]
    size = 512
    extent = 8.0
    w0 = 1.0

    [state]
    kind = pure            # pure | random | mixed | file
    amplitudes = 2:1       # ell:amplitude pairs, normalized on load

    [noise]
    photons = 1e7
    seed = 7

    [run]
    fhs_variant = cascade
    threshold = 0.99
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .basis import Basis, check_density, make_basis, parse_density
from .exceptions import InvalidArgument
from .tomography import SETTINGS, QSTConfig, hash_config, random_density

SCHEMA = {
    "basis": {"ell_max"},
    "grid": {"size", "extent", "w0", "truncation_tol", "aperture"},
    "state": {"kind", "amplitudes", "rank", "seed", "path"},
    "noise": {"photons", "seed"},
    "run": {"settings", "fhs_variant", "threshold", "psd_repair", "out"},
}
STATE_KINDS = ("pure", "random", "mixed", "file")


class ConfigError(InvalidArgument):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class StateSpec:
    kind: str = "pure"
    amplitudes: tuple = ((1, 1.0),)
    rank: int | None = None
    seed: int = 0
    path: str | None = None

    def density(self, basis: Basis) -> np.ndarray:
        d = basis.dim
        if self.kind == "pure":
            psi = np.zeros(d, dtype=complex)
            for ell, amp in self.amplitudes:
                if ell not in basis:
                    raise InvalidArgument(f"mode {ell} is outside the tomography basis")
                psi[basis.index(ell)] += amp
            norm = np.linalg.norm(psi)
            if norm == 0:
                raise InvalidArgument("pure state has zero norm")
            psi /= norm
            return np.outer(psi, psi.conj())
        if self.kind == "mixed":
            return np.eye(d, dtype=complex) / d
        if self.kind == "random":
            if self.rank is not None and not 1 <= self.rank <= d:
                raise InvalidArgument(f"rank must be between 1 and {d}")
            return random_density(d, self.rank, np.random.default_rng(self.seed))
        rho, file_basis = parse_density(Path(self.path).read_text())
        if rho.shape != (d, d):
            raise InvalidArgument(f"state file has dimension {rho.shape[0]}, basis needs {d}")
        if file_basis is not None and file_basis != basis:
            raise InvalidArgument(f"state file ordering {file_basis.label()} differs from {basis.label()}")
        check_density(rho)
        return rho


@dataclass(frozen=True)
class ExperimentConfig:
    ell_max: int = 3
    w0: float = 1.0
    grid_size: int = 512
    extent: float = 8.0
    truncation_tol: float = 1e-10
    aperture: float | None = None
    settings: tuple = SETTINGS
    photons: float | None = None
    seed: int | None = None
    state: StateSpec = field(default_factory=StateSpec)
    fhs_variant: str = "cascade"
    threshold: float = 0.99
    psd_repair: bool = False
    out: str | None = None

    def validate(self, lines: dict | None = None, source: str = "<config>") -> "ExperimentConfig":
        lines = lines or {}

        def fail(msg, key):
            raise ConfigError(msg, lines.get(key), source)

        if self.ell_max < 1:
            fail("ell_max must be >= 1", ("basis", "ell_max"))
        for key, sec in (("w0", "grid"), ("extent", "grid"), ("grid_size", "grid"),
                         ("truncation_tol", "grid"), ("threshold", "run")):
            if not getattr(self, key) > 0:
                fail(f"{key} must be positive", (sec, "size" if key == "grid_size" else key))
        if self.aperture is not None and self.aperture <= 0:
            fail("aperture must be positive", ("grid", "aperture"))
        if self.photons is not None and self.photons <= 0:
            fail("photons must be positive", ("noise", "photons"))
        if self.photons and self.seed is None:
            fail("a seed is required when photon noise is enabled", ("noise", "photons"))
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            fail("seed must be an unsigned 64-bit integer", ("noise", "seed"))
        if self.fhs_variant not in ("cascade", "slm"):
            fail(f"fhs_variant must be 'cascade' or 'slm', got {self.fhs_variant!r}", ("run", "fhs_variant"))
        unknown = [s for s in self.settings if s not in SETTINGS]
        if unknown:
            fail(f"unknown setting {unknown[0]!r}; valid: {', '.join(SETTINGS)}", ("run", "settings"))
        if set(self.settings) != set(SETTINGS):
            fail("full tomography needs the identity, hx and hy settings", ("run", "settings"))
        if self.state.kind not in STATE_KINDS:
            fail(f"state kind must be one of {', '.join(STATE_KINDS)}", ("state", "kind"))
        if self.state.kind == "file" and not self.state.path:
            fail("state kind 'file' needs a path", ("state", "kind"))
        return self

    def qst_config(self) -> QSTConfig:
        return QSTConfig(self.ell_max, self.w0, self.grid_size, self.extent, self.fhs_variant,
                         self.photons, self.seed, self.truncation_tol, self.aperture,
                         psd_repair=self.psd_repair)

    def basis(self) -> Basis:
        return make_basis(self.ell_max)

    def canonical(self) -> dict:
        """Flat, ordered view of every setting that influences the results."""
        st = self.state
        out = {
            "basis.ell_max": self.ell_max,
            "grid.size": self.grid_size,
            "grid.extent": self.extent,
            "grid.w0": self.w0,
            "grid.truncation_tol": self.truncation_tol,
            "grid.aperture": self.aperture,
            "noise.photons": self.photons,
            "noise.seed": self.seed,
            "run.settings": ",".join(self.settings),
            "run.fhs_variant": self.fhs_variant,
            "run.threshold": self.threshold,
            "run.psd_repair": self.psd_repair,
            "state.kind": st.kind,
        }
        if st.kind == "pure":
            out["state.amplitudes"] = ",".join(f"{l}:{a!r}" for l, a in st.amplitudes)
        elif st.kind == "random":
            out["state.rank"] = st.rank
            out["state.seed"] = st.seed
        elif st.kind == "file":
            out["state.sha256"] = hashlib.sha256(Path(st.path).read_bytes()).hexdigest()
        return out

    def config_hash(self) -> str:
        return hash_config(self.canonical())

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _line_numbers(text: str) -> dict:
    lines, section = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip().lower()
            lines[(section, None)] = n
        elif s and not s.startswith(("#", ";")) and "=" in s:
            lines[(section, s.split("=", 1)[0].strip().lower())] = n
    return lines


def _parse_amplitudes(text: str) -> tuple:
    pairs = []
    for tok in text.split(","):
        ell, sep, amp = tok.strip().partition(":")
        if not sep:
            raise ValueError(f"expected ell:amplitude, got {tok.strip()!r}")
        pairs.append((int(ell), complex(amp.replace(" ", ""))))
    if not pairs:
        raise ValueError("no amplitudes given")
    return tuple(pairs)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none", "off") else conv(text)
    return parse


_CONVERT = {
    ("basis", "ell_max"): ("ell_max", int),
    ("grid", "size"): ("grid_size", int),
    ("grid", "extent"): ("extent", float),
    ("grid", "w0"): ("w0", float),
    ("grid", "truncation_tol"): ("truncation_tol", float),
    ("grid", "aperture"): ("aperture", _optional(float)),
    ("noise", "photons"): ("photons", _optional(float)),
    ("noise", "seed"): ("seed", _optional(int)),
    ("run", "settings"): ("settings", lambda t: tuple(s.strip() for s in t.split(",") if s.strip())),
    ("run", "fhs_variant"): ("fhs_variant", str.strip),
    ("run", "threshold"): ("threshold", float),
    ("run", "psd_repair"): ("psd_repair", _bool),
    ("run", "out"): ("out", str.strip),
}

_STATE_CONVERT = {
    "kind": ("kind", lambda t: t.strip().lower()),
    "amplitudes": ("amplitudes", _parse_amplitudes),
    "rank": ("rank", _optional(int)),
    "seed": ("seed", int),
    "path": ("path", str.strip),
}


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    """Parse and validate config text; errors carry ``source:line`` prefixes."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", exc.lineno, source) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message.split(": ", 1)[-1], exc.lineno, source) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected key = value)", lineno, source) from None
    lines = _line_numbers(text)
    values, state = {}, {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((sec, None)), source)
        for key, raw in parser.items(section):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lines.get((sec, key)), source)
            name, conv = _STATE_CONVERT[key] if sec == "state" else _CONVERT[sec, key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}", lines.get((sec, key)), source) from None
            (state if sec == "state" else values)[name] = value
    if state.get("path") and base_dir is not None and not Path(state["path"]).is_absolute():
        state["path"] = str(Path(base_dir) / state["path"])
    if "kind" not in state and "path" in state:
        state["kind"] = "file"
    if state.get("kind") == "file" and state.get("path") and not Path(state["path"]).is_file():
        raise ConfigError(f"state file {state['path']} not found", lines.get(("state", "path")), source)
    cfg = ExperimentConfig(**values, state=StateSpec(**state))
    return cfg.validate(lines, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path), path.parent)


__all__ = ["ConfigError", "ExperimentConfig", "StateSpec", "load_config", "parse_config"]

"""INI experiment configuration: schema, parsing and line-precise validation.

Each command accepts a fixed set of sections; every key has a type and a
default (or is required). Unknown sections or keys, bad values and missing
required keys raise :class:`ConfigError` naming the file, line, section and
key. See ``configs/*.ini`` for an annotated example of every command.
"""

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

REQUIRED = object()


class ConfigError(ValueError):
    pass


def _floats(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(float(v) for v in re.split(r"[,\s]+", text) if v)


def _words(text):
    return tuple(v for v in re.split(r"[,\s]+", text.strip()) if v)


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_float(text):
    return None if text.strip() in ("", "auto") else float(text)


def _choice(*options):
    def parse(text):
        v = text.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return v
    parse.__name__ = "choice"
    return parse


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "out": (str, "run"),
        "n_jobs": (int, 1),
    },
    "model": {
        "source": (_choice("builder", "file"), "builder"),
        "path": (str, ""),
        "builder": (_choice("homogeneous", "layered", "linear_gradient"), "homogeneous"),
        "nx": (int, 0),
        "nz": (int, 0),
        "dx": (float, 10.0),
        "dz": (float, 10.0),
        "velocity": (float, 2000.0),
        "velocities": (_floats, ()),
        "interfaces": (_floats, ()),
        "v0": (float, 2000.0),
        "alpha": (float, 0.7),
        "water_depth": (float, 50.0),
        "water_velocity": (float, 1500.0),
        "vmin": (float, 1000.0),
        "vmax": (float, 6000.0),
    },
    "acquisition": {
        "source_x": (_floats, REQUIRED),
        "source_z": (float, REQUIRED),
        "receiver_x0": (float, REQUIRED),
        "receiver_x1": (float, REQUIRED),
        "receiver_dx": (float, REQUIRED),
        "receiver_z": (float, REQUIRED),
        "dt": (float, REQUIRED),
        "record_time": (float, REQUIRED),
        "record_stride": (int, 1),
    },
    "wavelet": {
        "f_peak": (float, 10.0),
        "delay": (_optional_float, None),
        "band": (_floats, ()),
    },
    "solver": {
        "pml": (int, 40),
        "pml_velocity": (float, 3000.0),
    },
    "objective": {
        "name": (_choice("l2", "w2"), "w2"),
        "beta": (float, 2.0),
        "floor_ratio": (float, 0.0),
        "amp_scale": (_optional_float, None),
    },
    "optimizer": {
        "max_iters": (int, 50),
        "stop_tol": (float, 1e-5),
        "memory": (int, 10),
        "vmin": (float, 1400.0),
        "vmax": (float, 4500.0),
    },
    "invert": {
        "smooth_sigma": (float, 20.0),
        "fixed_depth": (float, 0.0),
        "noise": (float, 0.0),
        "observed": (str, "synthetic"),
    },
    "landscape": {
        "v0_min": (float, 1600.0),
        "v0_max": (float, 2400.0),
        "n_v0": (int, 21),
        "alpha_min": (float, 0.3),
        "alpha_max": (float, 1.1),
        "n_alpha": (int, 21),
        "betas": (_floats, (0.8, 6.0)),
        "include_l2": (_bool, True),
    },
    "geodesic": {
        "f_peak": (float, 5.0),
        "delay": (float, 0.5),
        "shift": (float, 0.6),
        "dt": (float, 0.004),
        "nt": (int, 500),
        "beta": (float, 10.0),
        "constant": (_optional_float, None),
        "alphas": (_floats, (0.0, 0.25, 0.5, 0.75, 1.0)),
    },
    "freqscan": {
        "nt": (int, 400),
        "dt": (float, 0.005),
        "amplitude": (float, 0.5),
        "modes": (int, 8),
    },
    "gradcheck": {
        "objectives": (_words, ("l2", "w2")),
        "beta": (float, 3.0),
        "n_cells": (int, 5),
        "tolerance": (float, 1e-2),
        "smooth_sigma": (float, 3.0),
        "sabotage": (_bool, False),
    },
}

SIM = ("run", "model", "acquisition", "wavelet", "solver")
COMMANDS = {
    "forward": SIM,
    "invert": SIM + ("objective", "optimizer", "invert"),
    "landscape": SIM + ("landscape",),
    "geodesic": ("run", "geodesic"),
    "gradcheck": SIM + ("gradcheck",),
    "freqscan": ("run", "freqscan"),
}
# sections that must appear in the file (the rest fall back to defaults)
MANDATORY = {"acquisition"}


@dataclass
class ExperimentConfig:
    """Validated configuration: ``cfg["section"]["key"]`` gives typed values."""

    command: str
    sections: dict
    path: Path = None
    lines: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.sections[section]

    def where(self, section, key=None):
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        loc = f"{self.path}:{line}" if line else str(self.path)
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def error(self, section, key, msg):
        return ConfigError(f"{self.where(section, key)}: {msg}")

    def resolve(self, p):
        """Interpret a path from the file relative to the file's directory."""
        p = Path(p)
        if p.is_absolute() or self.path is None:
            return p
        return self.path.parent / p


_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")


def _line_index(text):
    lines = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        m = _SECTION.match(line)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, None), n)
            continue
        m = _KEY.match(line)
        if m and section is not None and not line[:1].isspace():
            lines.setdefault((section, m.group(1).strip().lower()), n)
    return lines


def parse_config(path, command):
    path = Path(path)
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config_text(text, command, path)


def parse_config_text(text, command, path=Path("<config>")):
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = ExperimentConfig(command, {}, path, lines)
    allowed = COMMANDS[command]
    for section in cp.sections():
        if section not in allowed:
            raise cfg.error(section, None, f"unknown section for command {command!r} "
                                           f"(allowed: {', '.join(allowed)})")
    for section in allowed:
        if section in MANDATORY and not cp.has_section(section):
            raise ConfigError(f"{path}: missing required section [{section}]")
        raw = dict(cp.items(section)) if cp.has_section(section) else {}
        values = {}
        for key in raw:
            if key not in SCHEMA[section]:
                raise cfg.error(section, key, f"unknown key {key!r}")
        for key, (parse, default) in SCHEMA[section].items():
            if key in raw:
                try:
                    values[key] = parse(raw[key])
                except ValueError as exc:
                    raise cfg.error(section, key, f"invalid value {raw[key]!r}: {exc}") from None
            elif default is REQUIRED:
                raise cfg.error(section, None, f"missing required key {key!r}")
            else:
                values[key] = default
        cfg.sections[section] = values
    _check_values(cfg)
    _check_setup(cfg)
    return cfg


def _positive(cfg, section, *keys):
    for key in keys:
        if not cfg[section][key] > 0:
            raise cfg.error(section, key, f"must be positive, got {cfg[section][key]}")


def _check_values(cfg):
    """Checks that need no model; cross-field checks live in the experiment builders."""
    s = cfg.sections
    if "run" in s and s["run"]["n_jobs"] < 1:
        raise cfg.error("run", "n_jobs", "must be >= 1")
    if "model" in s:
        mod = s["model"]
        if mod["source"] == "file":
            if not mod["path"]:
                raise cfg.error("model", "path", "source = file needs a path")
            p = cfg.resolve(mod["path"])
            if not p.is_file():
                raise cfg.error("model", "path", f"model file not found: {p}")
        else:
            _positive(cfg, "model", "nx", "nz", "dx", "dz")
            if mod["builder"] == "layered":
                v, z = mod["velocities"], mod["interfaces"]
                if not v or len(v) != len(z):
                    raise cfg.error("model", "velocities", "layered builder needs one velocity per interface")
                if z[0] != 0 or any(b <= a for a, b in zip(z[:-1], z[1:])):
                    raise cfg.error("model", "interfaces", "interfaces must start at 0 and increase")
        if not 0 < mod["vmin"] < mod["vmax"]:
            raise cfg.error("model", "vmin", "need 0 < vmin < vmax")
    if "acquisition" in s:
        _positive(cfg, "acquisition", "dt", "record_time", "receiver_dx", "record_stride")
        a = s["acquisition"]
        if not a["source_x"]:
            raise cfg.error("acquisition", "source_x", "at least one source is required")
        if a["receiver_x1"] < a["receiver_x0"]:
            raise cfg.error("acquisition", "receiver_x1", "must not be below receiver_x0")
    if "wavelet" in s:
        _positive(cfg, "wavelet", "f_peak")
        band = s["wavelet"]["band"]
        if band and (len(band) != 2 or not 0 < band[0] < band[1]):
            raise cfg.error("wavelet", "band", "expected 'lo, hi' with 0 < lo < hi")
    if "solver" in s and s["solver"]["pml"] < 0:
        raise cfg.error("solver", "pml", "must be >= 0")
    if "objective" in s:
        o = s["objective"]
        if o["name"] == "w2" and o["beta"] == 0:
            raise cfg.error("objective", "beta", "must be nonzero")
        if not 0 <= o["floor_ratio"] < 1:
            raise cfg.error("objective", "floor_ratio", "must lie in [0, 1)")
    if "optimizer" in s:
        _positive(cfg, "optimizer", "stop_tol", "memory")
        if not 0 < s["optimizer"]["vmin"] < s["optimizer"]["vmax"]:
            raise cfg.error("optimizer", "vmin", "need 0 < vmin < vmax")
    if "invert" in s:
        for key in ("smooth_sigma", "fixed_depth", "noise"):
            if s["invert"][key] < 0:
                raise cfg.error("invert", key, "must be >= 0")
        obs = s["invert"]["observed"]
        if obs != "synthetic" and not cfg.resolve(obs).is_dir():
            raise cfg.error("invert", "observed", f"observed-data directory not found: {cfg.resolve(obs)}")
    if "landscape" in s:
        ls = s["landscape"]
        if ls["n_v0"] < 3 or ls["n_alpha"] < 3:
            raise cfg.error("landscape", "n_v0", "scan needs at least 3 points per axis")
        if any(b == 0 for b in ls["betas"]):
            raise cfg.error("landscape", "betas", "beta must be nonzero")
    if "geodesic" in s:
        _positive(cfg, "geodesic", "f_peak", "dt", "nt")
        if any(not 0 <= a <= 1 for a in s["geodesic"]["alphas"]):
            raise cfg.error("geodesic", "alphas", "interpolation weights must lie in [0, 1]")
    if "freqscan" in s:
        _positive(cfg, "freqscan", "nt", "dt", "modes")
        if not 0 < s["freqscan"]["amplitude"] < 1:
            raise cfg.error("freqscan", "amplitude", "must lie in (0, 1) to keep densities positive")
    if "gradcheck" in s:
        g = s["gradcheck"]
        bad = [o for o in g["objectives"] if o not in ("l2", "w2")]
        if bad or not g["objectives"]:
            raise cfg.error("gradcheck", "objectives", f"expected l2 and/or w2, got {bad}")
        _positive(cfg, "gradcheck", "n_cells", "tolerance")


def _check_setup(cfg):
    """Build the model and acquisition once so CFL and geometry errors surface before any run."""
    if "model" not in cfg.sections or "acquisition" not in cfg.sections:
        return
    from .experiments import build_acquisition, build_model
    from .storage import FormatError

    try:
        model = build_model(cfg)
    except FormatError as exc:
        raise cfg.error("model", "path", str(exc)) from None
    build_acquisition(cfg, model)

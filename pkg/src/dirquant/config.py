"""Run configuration: TOML file, defaults and command-line overrides.

The resolved configuration (all defaults filled in) is a plain nested dict;
it is echoed into ``spec.json`` so every run directory is self-describing.
"""

import copy
import dataclasses
from pathlib import Path

import tomli

from .errors import InvalidArgument
from .gp_adjust import GpConfig
from .orchestrator import ModelSpec, SplineConfig
from .sampler import MCMC_PRESETS, McmcSettings, PriorSpec

DEFAULTS = {
    "data": {"path": None, "responses": ["y1", "y2"], "linear": [], "categorical": {}},
    "spline": [],
    "model": {"taus": [0.1, 0.2, 0.3], "directions": 64, "scale": True, "seed": 0},
    "prior": dataclasses.asdict(PriorSpec()),
    "mcmc": {"preset": "default", "iterations": None, "burn_in": None, "thin": None},
    "gp": {**{k: v for k, v in dataclasses.asdict(GpConfig()).items() if k != "bandwidth"},
           "mapping": "intercept", "max_check_points": 256},
    "contour": {"points": [{}], "svg": True},
    "check": {"subgradient_tolerance": 0.02, "nesting_slack": 1e-8},
    "simulate": {"kind": "spherical-gaussian", "n": 1000, "k": 2, "seed": 0, "params": {}},
    "run": {"workers": 1},
}

SPLINE_DEFAULTS = {"degree": 3, "n_knots": 20, "range": None}


def _merge(base, extra, where=""):
    for key, value in extra.items():
        if key not in base:
            raise InvalidArgument(f"unknown configuration key {where + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key not in ("categorical", "params"):
            _merge(base[key], value, where + key + ".")
        else:
            base[key] = value
    return base


def load(path=None, overrides=None, base_dir=None):
    """Resolve a configuration from an optional TOML file and overrides.

    ``overrides`` is a nested dict applied after the file. A relative data
    path is resolved against the config file's directory.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise InvalidArgument(f"cannot parse {path}: {exc}") from None
        _merge(cfg, raw)
        base_dir = path.parent
    if overrides:
        _merge(cfg, overrides)
    return resolve(cfg, base_dir)


def resolve(cfg, base_dir=None):
    """Fill derived defaults (MCMC preset, spline defaults, absolute data path) and validate."""
    cfg = copy.deepcopy(cfg)
    mcmc = cfg["mcmc"]
    preset = mcmc.get("preset", "default")
    if preset not in MCMC_PRESETS:
        raise InvalidArgument(f"unknown MCMC preset {preset!r}; choose from {sorted(MCMC_PRESETS)}")
    cfg["mcmc"] = {"preset": preset, **MCMC_PRESETS[preset],
                   **{k: int(v) for k, v in mcmc.items() if k != "preset" and v is not None}}
    splines = []
    for s in cfg["spline"]:
        if "variable" not in s:
            raise InvalidArgument("every [[spline]] table needs a variable")
        unknown = set(s) - set(SPLINE_DEFAULTS) - {"variable"}
        if unknown:
            raise InvalidArgument(f"unknown spline keys {sorted(unknown)}")
        splines.append({"variable": s["variable"], **SPLINE_DEFAULTS,
                        **{k: v for k, v in s.items() if k != "variable"}})
    cfg["spline"] = splines
    cfg["model"]["taus"] = [float(t) for t in cfg["model"]["taus"]]
    cfg["data"]["categorical"] = {k: (None if v in ("", None) else str(v))
                                  for k, v in cfg["data"]["categorical"].items()}
    if cfg["data"]["path"] is not None:
        p = Path(cfg["data"]["path"])
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        cfg["data"]["path"] = str(p.resolve())
    model_spec(cfg)
    gp_config(cfg)
    return cfg


def model_spec(cfg):
    m, d = cfg["model"], cfg["data"]
    mc = cfg["mcmc"]
    return ModelSpec(
        responses=list(d["responses"]),
        taus=tuple(m["taus"]),
        directions=int(m["directions"]),
        linear=list(d["linear"]),
        categorical=dict(d["categorical"]),
        splines=[SplineConfig(s["variable"], int(s["degree"]), int(s["n_knots"]),
                              None if s["range"] is None else tuple(s["range"]))
                 for s in cfg["spline"]],
        priors=PriorSpec(**cfg["prior"]),
        mcmc=McmcSettings(mc["iterations"], mc["burn_in"], mc["thin"], int(m["seed"])),
        scale=bool(m["scale"]),
    )


def gp_config(cfg):
    g = cfg["gp"]
    if g["mapping"] not in ("intercept", "weights"):
        raise InvalidArgument(f"gp.mapping must be 'intercept' or 'weights', got {g['mapping']!r}")
    fields = {f.name for f in dataclasses.fields(GpConfig)}
    return GpConfig(**{k: v for k, v in g.items() if k in fields})

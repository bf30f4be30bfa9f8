"""Experiment configuration: JSON loading, validation and object factories."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError
from .grid import Grid, IndicatorMask, TimeGrid, build_mask
from .hum import HumConfig
from .sentinel import SentinelConfig
from .solvers import KSHeatSystem, PhysicsParams
from .weights import CarlemanParams, WeightSet, build_nu, build_weights, search_k

SECTIONS = ("grid", "physics", "sets", "carleman", "hum", "sentinel", "sources", "output", "audit")

DEFAULTS: dict[str, dict[str, Any]] = {
    "grid": {"N": 32, "M": 64, "T": 1.0},
    "physics": {"gamma": 1.0, "beta": 0.5, "alpha": 0.5},
    "sets": {"omega": [0.3, 0.6], "O": [0.5, 0.8], "smoothing": "sharp"},
    "carleman": {"m": 2.0, "k": "auto", "s": 1.0, "lambda": 2.0, "p": 10},
    "hum": {"epsilon": 1e-6, "cg_tol": 1e-8, "cg_max_iter": 500, "absolute_epsilon": False},
    "sentinel": {"tau_list": [1e-3, 5e-4], "n_perturbations": 10, "rng_seed": 0, "alphas": None},
    "sources": {"kind": "zero", "params": {}},
    "output": {"dir": "out", "formats": ["csv", "json"]},
    "audit": {
        "weights": True, "b_list": [3, 7, 39],
        "good_sign": True,
        "admissibility": True,
        "carleman": True, "regimes": ["interior", "zero", "one"], "n_draws": 5,
        "observability": False, "mu_list": [1e-8, 1e-6, 1e-4, 1e-2],
    },
}

SOURCE_KINDS = ("zero", "gaussian-bump", "file")


def _merge(section: str, given: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"section '{section}' must be a JSON object")
    unknown = set(given) - set(DEFAULTS[section])
    if unknown:
        raise ConfigError(f"section '{section}' has unknown keys {sorted(unknown)}")
    out = copy.deepcopy(DEFAULTS[section])
    out.update(given)
    return out


def _interval(name: str, v) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"sets.{name} must be a pair [a, b]") from None
    if not 0.0 <= a < b <= 1.0:
        raise ConfigError(f"sets.{name} = ({a}, {b}) must satisfy 0 <= a < b <= 1")
    return a, b


@dataclass
class ExperimentConfig:
    """Validated configuration; ``raw`` keeps the merged JSON for manifests."""

    raw: dict = field(repr=False)
    grid: Grid = None
    time: TimeGrid = None
    physics: PhysicsParams = None
    omega: tuple = (0.3, 0.6)
    obs: tuple = (0.5, 0.8)
    smoothing: str = "sharp"
    hum: HumConfig = None
    sentinel: SentinelConfig = None
    k_auto: bool = True
    k_min: Optional[float] = None
    source_dir: Optional[Path] = None

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - set(SECTIONS) - {"schema_version"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        raw = {s: _merge(s, data.get(s, {})) for s in SECTIONS}
        g, ph, st = raw["grid"], raw["physics"], raw["sets"]
        try:
            grid = Grid(int(g["N"]))
            time = TimeGrid(float(g["T"]), int(g["M"]))
            physics = PhysicsParams(float(ph["gamma"]), float(ph["beta"]), float(ph["alpha"]))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"grid/physics entries must be numbers: {e}") from None
        omega, obs = _interval("omega", st["omega"]), _interval("O", st["O"])
        if min(omega[1], obs[1]) <= max(omega[0], obs[0]):
            raise ConfigError(f"omega {omega} and O {obs} must intersect (omega ∩ O nonempty)")
        if st["smoothing"] not in ("sharp", "linear-ramp"):
            raise ConfigError(f"sets.smoothing must be 'sharp' or 'linear-ramp', got {st['smoothing']!r}")
        h = raw["hum"]
        hum = HumConfig(float(h["epsilon"]), float(h["cg_tol"]), h["cg_max_iter"], bool(h["absolute_epsilon"]))
        sn = raw["sentinel"]
        alphas = None if sn["alphas"] is None else tuple(float(a) for a in sn["alphas"])
        if alphas is not None and any(not 0 <= a <= 1 for a in alphas):
            raise ConfigError("sentinel.alphas must lie in [0, 1]")
        sentinel = SentinelConfig(physics.alpha, tuple(float(t) for t in sn["tau_list"]),
                                  int(sn["n_perturbations"]), int(sn["rng_seed"]), alphas)
        cfg = cls(raw, grid, time, physics, omega, obs, st["smoothing"], hum, sentinel,
                  source_dir=base_dir)
        cfg._check_carleman()
        cfg._check_sources()
        cfg._check_output()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        return cls.from_dict(data, path.parent)

    def _check_carleman(self):
        c = self.raw["carleman"]
        self.k_auto = c["k"] == "auto"
        if isinstance(c["k"], str) and not self.k_auto:
            raise ConfigError(f"carleman.k must be a number or \"auto\", got {c['k']!r}")
        m = float(c["m"])
        # with k = "auto" the search result always exceeds m; check the rest with k = m + 1
        k = m + 1.0 if self.k_auto else float(c["k"])
        CarlemanParams(m, k, float(c["s"]), float(c["lambda"]), self.time.T)
        if int(c["p"]) != c["p"] or c["p"] < 3:
            raise ConfigError("carleman.p must be an integer >= 3")
        build_nu(self.omega0_interval, self.grid)

    def _check_sources(self):
        src = self.raw["sources"]
        if src["kind"] not in SOURCE_KINDS:
            raise ConfigError(f"sources.kind must be one of {SOURCE_KINDS}, got {src['kind']!r}")
        if not isinstance(src["params"], dict):
            raise ConfigError("sources.params must be a JSON object")
        if src["kind"] == "gaussian-bump":
            p = self.bump_params()
            if p["w_x"] <= 0 or p["w_t"] <= 0:
                raise ConfigError("gaussian-bump widths w_x, w_t must be > 0")
        if src["kind"] == "file" and "path" not in src["params"]:
            raise ConfigError("sources.kind = 'file' needs params.path")

    def _check_output(self):
        fmts = self.raw["output"]["formats"]
        if not set(fmts) <= {"csv", "json"}:
            raise ConfigError(f"output.formats must be a subset of ['csv', 'json'], got {fmts}")

    def with_overrides(self, **sections) -> "ExperimentConfig":
        data = copy.deepcopy(self.raw)
        for sec, vals in sections.items():
            data[sec].update(vals)
        return ExperimentConfig.from_dict(data, self.source_dir)

    # factories

    @property
    def omega0_interval(self) -> tuple[float, float]:
        """Middle half of omega ∩ O."""
        a = max(self.omega[0], self.obs[0])
        b = min(self.omega[1], self.obs[1])
        return a + 0.25 * (b - a), b - 0.25 * (b - a)

    def masks(self) -> tuple[IndicatorMask, IndicatorMask, IndicatorMask]:
        g, sm = self.grid, self.smoothing
        return (build_mask(g, *self.omega, sm), build_mask(g, *self.obs, sm),
                build_mask(g, *self.omega0_interval, sm))

    def system(self, alpha: Optional[float] = None) -> KSHeatSystem:
        om, ob, _ = self.masks()
        phys = self.physics if alpha is None else self.physics.with_alpha(alpha)
        return KSHeatSystem(self.grid, self.time, phys, om, ob)

    def nu(self):
        return build_nu(self.omega0_interval, self.grid)

    def carleman_params(self) -> CarlemanParams:
        c = self.raw["carleman"]
        m, lam = float(c["m"]), float(c["lambda"])
        if self.k_auto:
            if self.k_min is None:
                self.k_min = search_k(self.nu(), m, lam, int(c["p"]))
            k = self.k_min
        else:
            k = float(c["k"])
        return CarlemanParams(m, k, float(c["s"]), lam, self.time.T)

    def weights(self) -> WeightSet:
        return build_weights(self.nu(), self.carleman_params(), self.time)

    def bump_params(self) -> dict:
        T = self.time.T
        p = {"amplitude": 1.0, "x_c": 0.5 * (self.obs[0] + self.obs[1]), "w_x": 0.1,
             "t_c": 0.5 * T, "w_t": T / 8, "t_min": T / 4, "components": [1.0, 1.0]}
        given = self.raw["sources"]["params"]
        unknown = set(given) - set(p)
        if unknown:
            raise ConfigError(f"gaussian-bump params has unknown keys {sorted(unknown)}")
        p.update(given)
        return p

    def sources(self) -> tuple[np.ndarray, np.ndarray]:
        kind = self.raw["sources"]["kind"]
        shape = (self.time.M + 1, self.grid.n_interior)
        if kind == "zero":
            return np.zeros(shape), np.zeros(shape)
        if kind == "gaussian-bump":
            return gaussian_bump(self.grid, self.time, **self.bump_params())
        path = Path(self.raw["sources"]["params"]["path"])
        if not path.is_absolute() and self.source_dir is not None:
            path = self.source_dir / path
        try:
            data = np.load(path)
        except FileNotFoundError:
            raise ConfigError(f"source file {path} not found") from None
        xi1, xi2 = np.asarray(data["xi1"], float), np.asarray(data["xi2"], float)
        if xi1.shape != shape or xi2.shape != shape:
            raise ConfigError(f"source arrays must have shape {shape}, got {xi1.shape} and {xi2.shape}")
        return xi1, xi2


def gaussian_bump(grid: Grid, time: TimeGrid, amplitude=1.0, x_c=0.65, w_x=0.1, t_c=None, w_t=None,
                  t_min=None, components=(1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """A exp(-((x - x_c)^2 / w_x^2 + (t - t_c)^2 / w_t^2)), zero for t < t_min."""
    T = time.T
    t_c = 0.5 * T if t_c is None else t_c
    w_t = T / 8 if w_t is None else w_t
    t_min = 0.25 * T if t_min is None else t_min
    t, x = time.t[:, None], grid.x[None, :]
    f = amplitude * np.exp(-((x - x_c) ** 2 / w_x**2 + (t - t_c) ** 2 / w_t**2)) * (t >= t_min)
    return components[0] * f, components[1] * f


def canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


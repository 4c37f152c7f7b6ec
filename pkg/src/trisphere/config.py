"""Run configuration: a strict, human-readable YAML tree.

Every block validates against the module preconditions before any compute
starts; unknown keys are errors (fail-fast contract).  All lengths are
expressed relative to the sphere radius so a config stays scale-free.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import yaml

from .kinematics import STATES, SwimmerGeometry
from .transport import TransportConfig


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


#: default (gamma, alpha) grids; the gamma rows bracket the 0.7 / 0.9
#: success thresholds of the learning experiments
GAMMA_GRID = (0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99)
ALPHA_GRID = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)

DEFAULTS = {
    "geometry": {
        "R": 1.0,
        "W_over_R": 10.0,
        "w_over_R": 6.0,
        "S": 1.0,
        "mu": 1.0,
    },
    "transport": {
        "pe": [0.6, 6.0, 60.0],
        "window_x_over_R": 48.0,
        "window_rho_over_R": 16.0,
        "nx": 480,
        "nrho": 160,
        "dt_over_stroke": 0.1,
        "c_inf": 1.0,
        "g_R_over_c_inf": 0.01,
        "penal_factor": 1.0e7,
        "solver": "dst",
        "capture_xi": 0.37,
        "sherwood_w_over_R": [2.0, 4.0, 6.0],
        "max_periods": 125,
        "periodic_tol": 0.005,
        "transient_horizon": 500.0,
    },
    "validate": {
        "pe": [0.01, 0.1, 1.0, 10.0, 100.0],
        "window_x_over_R": 24.0,
        "window_rho_over_R": 8.0,
        "nx": 480,
        "nrho": 160,
        "dt_R_over_S": 0.02,
        "sherwood_tol": 0.10,
        "diffusive_tol": 0.02,
        "scallop_tol": 1e-10,
    },
    "generate": {
        "n_actions_low_pe": 6000,
        "n_actions": 1000,
        "low_pe_threshold": 0.1,
        "s0": 4,
        "window_x_over_R": 36.0,
        "window_rho_over_R": 12.0,
        "nx": 180,
        "nrho": 60,
        "solver": "splu",
    },
    "rl": {
        "batch_size": 500,
        "n_batches_overlapping": 10,
        "gamma_grid": list(GAMMA_GRID),
        "alpha_grid": list(ALPHA_GRID),
        "tie_epsilon": 1e-12,
        "surrogate_n_actions": 6000,
        "eta_ladder": [0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
    },
}


def _merge_strict(defaults: dict, user: dict, path: str = "") -> dict:
    out = {}
    for key, dval in defaults.items():
        if isinstance(dval, dict):
            out[key] = _merge_strict(dval, user.get(key, {}), f"{path}{key}.")
        else:
            out[key] = user.get(key, dval)
    unknown = set(user) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return out


@dataclass
class RunConfig:
    """Validated experiment configuration."""

    tree: dict
    seed: int = 0
    fast: bool = False

    @classmethod
    def load(cls, path=None, seed: int = 0, fast: bool = False) -> "RunConfig":
        user = {}
        if path is not None:
            with open(path) as f:
                user = yaml.safe_load(f) or {}
            if not isinstance(user, dict):
                raise ConfigError("config root must be a mapping")
        tree = _merge_strict(DEFAULTS, user)
        cfg = cls(tree=tree, seed=int(seed), fast=fast)
        if fast:
            cfg._apply_fast_profile()
        cfg.validate()
        return cfg

    def _apply_fast_profile(self):
        t = self.tree["transport"]
        t["nx"] //= 2
        t["nrho"] //= 2
        t["max_periods"] = max(6, t["max_periods"] // 8)
        t["transient_horizon"] = min(t["transient_horizon"], 60.0)
        v = self.tree["validate"]
        v["nx"] //= 2
        v["nrho"] //= 2
        g = self.tree["generate"]
        g["n_actions_low_pe"] = min(g["n_actions_low_pe"], 120)
        g["n_actions"] = min(g["n_actions"], 120)

    def validate(self):
        try:
            self.geometry()
        except ValueError as exc:
            raise ConfigError(f"geometry block: {exc}") from exc
        t = self.tree["transport"]
        for pe in t["pe"]:
            if pe <= 0:
                raise ConfigError("transport.pe entries must be positive")
            try:
                self.transport(pe)
            except ValueError as exc:
                raise ConfigError(f"transport block at pe={pe}: {exc}") from exc
        g = self.tree["generate"]
        if g["s0"] not in STATES:
            raise ConfigError("generate.s0 must be one of the four states")
        if self.tree["transport"]["g_R_over_c_inf"] < 0:
            raise ConfigError("background gradient must be >= 0")
        r = self.tree["rl"]
        if r["batch_size"] < 1 or r["n_batches_overlapping"] < 1:
            raise ConfigError("rl batch settings must be positive")
        for g_ in r["gamma_grid"]:
            if not (0.0 < g_ < 1.0):
                raise ConfigError("gamma grid entries must lie in (0, 1)")
        for a_ in r["alpha_grid"]:
            if not (0.0 < a_ <= 1.0):
                raise ConfigError("alpha grid entries must lie in (0, 1]")
        if any(f < 0 for f in r["eta_ladder"]):
            raise ConfigError("eta ladder factors must be >= 0")
        geo = self.geometry()
        for wr in self.tree["transport"]["sherwood_w_over_R"]:
            if not (0 < wr * geo.R < geo.W and geo.W - wr * geo.R > 2 * geo.R):
                raise ConfigError(f"sherwood w/R={wr} breaks the arm geometry")

    # ------------------------------------------------------------------
    def geometry(self) -> SwimmerGeometry:
        g = self.tree["geometry"]
        return SwimmerGeometry(
            R=g["R"], W=g["W_over_R"] * g["R"], w=g["w_over_R"] * g["R"],
            S=g["S"], mu=g["mu"],
        )

    def transport(self, pe: float, gradient: bool = False) -> TransportConfig:
        geo = self.geometry()
        t = self.tree["transport"]
        g = t["g_R_over_c_inf"] * t["c_inf"] / geo.R if gradient else 0.0
        return TransportConfig(
            pe=pe,
            window_x=t["window_x_over_R"] * geo.R,
            window_rho=t["window_rho_over_R"] * geo.R,
            nx=t["nx"],
            nrho=t["nrho"],
            dt=t["dt_over_stroke"] * geo.stroke_time,
            c_inf=t["c_inf"],
            g=g,
            penal_factor=t["penal_factor"],
            solver=t["solver"],
            capture_xi=t["capture_xi"],
        )

    def generation_transport(self, pe: float) -> TransportConfig:
        geo = self.geometry()
        t = self.tree["transport"]
        gen = self.tree["generate"]
        return TransportConfig(
            pe=pe,
            window_x=gen["window_x_over_R"] * geo.R,
            window_rho=gen["window_rho_over_R"] * geo.R,
            nx=gen["nx"],
            nrho=gen["nrho"],
            dt=t["dt_over_stroke"] * geo.stroke_time,
            c_inf=t["c_inf"],
            g=t["g_R_over_c_inf"] * t["c_inf"] / geo.R,
            penal_factor=t["penal_factor"],
            solver=gen["solver"],
            capture_xi=t["capture_xi"],
        )

    def validation_transport(self, pe: float) -> TransportConfig:
        geo = self.geometry()
        v = self.tree["validate"]
        return TransportConfig(
            pe=pe,
            window_x=v["window_x_over_R"] * geo.R,
            window_rho=v["window_rho_over_R"] * geo.R,
            nx=v["nx"],
            nrho=v["nrho"],
            dt=v["dt_R_over_S"] * geo.R / geo.S,
            c_inf=self.tree["transport"]["c_inf"],
            solver=self.tree["transport"]["solver"],
            capture_xi=self.tree["transport"]["capture_xi"],
        )

    def n_actions_for(self, pe: float) -> int:
        g = self.tree["generate"]
        if pe <= g["low_pe_threshold"]:
            return g["n_actions_low_pe"]
        return g["n_actions"]

    def config_hash(self) -> str:
        blob = json.dumps(self.tree, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def header_comment(self) -> str:
        from . import __version__

        return (
            f"trisphere v{__version__} config_sha256={self.config_hash()} "
            f"seed={self.seed} fast={self.fast}"
        )

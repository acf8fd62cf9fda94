"""Run configuration: INI file plus command-line overrides.

Every tunable lives in one of four sections. Unknown keys are rejected so
typos do not silently fall back to defaults. The canonical rendering of a
resolved configuration is hashed into run manifests.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from pathlib import Path

from .behaviors import BehaviorKind, BehaviorParams
from .errors import MissingInputError
from .gp import GPConfig
from .sampling import DEFAULT_MOBILITY, SAMPLES_PER_PATH, WALKING_SPEED_KMH, MobilityModel
from .simulation import SimConfig
from .viewshed import load_viewshed_weights

DEFAULTS: dict[str, dict[str, str]] = {
    "simulation": {
        "d_max": "10000",
        "n_gen": "1000",
        "paths_per_start": "200",
        "sigma_xx": "10000",
        "sigma_yy": "10000",
        "sigma_xy": "0",
        "eye_height": "1.6",
        "behavior": "",
    },
    "behaviors": {
        "crossing_b": "8000",
        "lambda_max": "5",
        "k_nearest": "3",
        "viewshed_radius": "300",
        "viewshed_cadence": "10",
        "mix_paths": "42",
        "mix_buildings": "30",
        "mix_trees": "4",
        "mix_water": "1",
        "weights_file": "",
    },
    "sampling": {
        "samples_per_path": str(SAMPLES_PER_PATH),
        "speed_kmh": str(WALKING_SPEED_KMH),
        "mobility_s": repr(DEFAULT_MOBILITY.s),
        "mobility_scale": repr(DEFAULT_MOBILITY.lambda_scale),
        "mobility_loc": "0",
        "pdm_cell_size": "",
    },
    "gp": {
        "iterations": "500",
        "learning_rate": "0.05",
        "out_cell_size": "20",
        "exact_limit": "4096",
        "inducing_per_axis": "",
    },
}


class RunConfig:
    """Resolved string settings with typed accessors."""

    def __init__(self, values: dict[str, dict[str, str]] | None = None):
        self.values = {s: dict(kv) for s, kv in DEFAULTS.items()}
        for section, kv in (values or {}).items():
            for key, value in kv.items():
                self.set(section, key, value)

    def set(self, section: str, key: str, value) -> None:
        if section not in self.values:
            raise ValueError(f"unknown config section [{section}]")
        if key not in self.values[section]:
            raise ValueError(f"unknown config key '{key}' in [{section}]")
        self.values[section][key] = "" if value is None else str(value)

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def getfloat(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def getint(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def optional_float(self, section: str, key: str) -> float | None:
        v = self.get(section, key)
        return float(v) if v else None

    def render(self) -> str:
        """Canonical INI text: sections and keys in fixed order."""
        buf = io.StringIO()
        for section in DEFAULTS:
            buf.write(f"[{section}]\n")
            for key in DEFAULTS[section]:
                buf.write(f"{key} = {self.values[section][key]}\n")
            buf.write("\n")
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.render().encode()).hexdigest()

    def as_dict(self) -> dict:
        return {s: dict(kv) for s, kv in self.values.items()}

    # -- builders ---------------------------------------------------------

    def behavior_params(self, base_dir: Path | None = None) -> BehaviorParams:
        b = self.values["behaviors"]
        weights_file = b["weights_file"]
        if weights_file and base_dir is not None and not Path(weights_file).is_absolute():
            weights_file = str(Path(base_dir) / weights_file)
        return BehaviorParams(
            crossing_b=float(b["crossing_b"]),
            lambda_max=int(b["lambda_max"]),
            k_nearest=int(b["k_nearest"]),
            viewshed_radius=float(b["viewshed_radius"]),
            viewshed_cadence=int(b["viewshed_cadence"]),
            mix={
                BehaviorKind.HEAD_TO_PATHS: float(b["mix_paths"]),
                BehaviorKind.HEAD_TO_BUILDINGS: float(b["mix_buildings"]),
                BehaviorKind.HEAD_TO_TREES: float(b["mix_trees"]),
                BehaviorKind.HEAD_TO_WATER: float(b["mix_water"]),
            },
            weights=load_viewshed_weights(weights_file or None),
        )

    def sim_config(self, seed: int, cell_size: float = 5.0, base_dir: Path | None = None) -> SimConfig:
        s = self.values["simulation"]
        sxx, syy, sxy = float(s["sigma_xx"]), float(s["sigma_yy"]), float(s["sigma_xy"])
        return SimConfig(
            d_max=float(s["d_max"]),
            cell_size=cell_size,
            eye_height=float(s["eye_height"]),
            n_gen=int(s["n_gen"]),
            seed=seed,
            paths_per_start=int(s["paths_per_start"]),
            sigma=((sxx, sxy), (sxy, syy)),
            behavior=self.behavior_params(base_dir),
            behavior_override=BehaviorKind(s["behavior"]) if s["behavior"] else None,
        )

    def mobility(self) -> MobilityModel:
        m = self.values["sampling"]
        return MobilityModel(float(m["mobility_s"]), float(m["mobility_loc"]),
                             float(m["mobility_scale"]), float(m["speed_kmh"]))

    def gp_config(self, seed: int) -> GPConfig:
        g = self.values["gp"]
        return GPConfig(
            iterations=int(g["iterations"]),
            learning_rate=float(g["learning_rate"]),
            exact_limit=int(g["exact_limit"]),
            inducing_per_axis=int(g["inducing_per_axis"]) if g["inducing_per_axis"] else None,
            seed=seed,
        )


def load_config(path=None, overrides: dict[tuple[str, str], object] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        cp.read(path)
        for section in cp.sections():
            for key, value in cp[section].items():
                cfg.set(section, key, value)
        # anchor a relative weights file to the config so manifests stay replayable
        weights = cfg.get("behaviors", "weights_file")
        if weights and not Path(weights).is_absolute():
            cfg.set("behaviors", "weights_file", str((path.parent / weights).resolve()))
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            cfg.set(section, key, value)
    return cfg

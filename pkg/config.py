"""
Configuration for the ruin-probability toolkit: run defaults and scenario loading
"""
import os
import json
import logging
from typing import Dict, Optional

from dotenv import load_dotenv

from utils import ConfigError

logger = logging.getLogger(__name__)

load_dotenv()

CONFIG = {
    "scenario_dir": os.getenv("RUIN_SCENARIO_DIR", "scenarios"),
    "out_dir": os.getenv("RUIN_OUT_DIR", "out"),
    "threads": int(os.getenv("RUIN_THREADS", "1")),
    "seed": int(os.getenv("RUIN_SEED", "20240601")),
    "log_level": os.getenv("RUIN_LOG_LEVEL", "INFO"),
    "block_size": int(os.getenv("RUIN_BLOCK_SIZE", "4096")),
    "substep": 1e-2,
    "mean_interjump_horizon": 200,
    "pilot_paths": 4000,
    "u_grid_points": 8,
    "u_grid_ratio": 2.0,
    "pilot_target": (0.05, 0.5),
    "noise_floor": 5.0,
    "censoring_guard": 0.01,
    "overflow_cap": 1e300,
    "frobenius_order": 20,
    "residual_s_range": (1e-3, 1e-1),
}

# Keys accepted in each block of a scenario file
SCENARIO_SCHEMA = {
    "model": ["a", "sigma", "c", "lambda1", "lambda2", "law1", "law2"],
    "sim": ["horizon", "substep", "n_paths", "seed", "ruin_floor", "bridge_correction", "scheme"],
    "u_grid": ["values", "u0", "points", "ratio"],
    "check": ["horizon_stability", "frobenius_order", "convention"],
}

REQUIRED_MODEL_KEYS = ["a", "sigma", "c", "lambda1", "lambda2", "law1", "law2"]


def parse_scenario(raw: Dict, source: str = "<memory>") -> Dict:
    """Check a decoded scenario document against SCENARIO_SCHEMA"""
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: scenario must be a JSON object")
    if "model" not in raw:
        raise ConfigError(f"{source}: missing 'model' block")

    for block, value in raw.items():
        if block in ("name", "description"):
            continue
        if block not in SCENARIO_SCHEMA:
            raise ConfigError(f"{source}: unknown block '{block}'")
        if not isinstance(value, dict):
            raise ConfigError(f"{source}: block '{block}' must be an object")
        unknown = [k for k in value if k not in SCENARIO_SCHEMA[block]]
        if unknown:
            raise ConfigError(f"{source}: unknown keys in '{block}': {', '.join(unknown)}")

    missing = [k for k in REQUIRED_MODEL_KEYS if k not in raw["model"]]
    if missing:
        raise ConfigError(f"{source}: model block lacks {', '.join(missing)}")

    scenario = {
        "name": raw.get("name", os.path.splitext(os.path.basename(source))[0]),
        "description": raw.get("description", ""),
        "model": dict(raw["model"]),
        "sim": dict(raw.get("sim", {})),
        "u_grid": dict(raw.get("u_grid", {})),
        "check": dict(raw.get("check", {})),
    }
    return scenario


def load_scenario(path: str) -> Dict:
    """Load and schema-check a scenario JSON file"""
    if not os.path.exists(path):
        raise ConfigError(f"scenario file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e})") from e
    scenario = parse_scenario(raw, source=path)
    logger.info(f"✅ Loaded scenario '{scenario['name']}' from {path}")
    return scenario


def resolve_run_options(scenario: Optional[Dict] = None, seed: Optional[int] = None,
                        threads: Optional[int] = None, out_dir: Optional[str] = None) -> Dict:
    """Merge CLI flags over scenario values over CONFIG defaults"""
    sim = (scenario or {}).get("sim", {})
    return {
        "seed": seed if seed is not None else sim.get("seed", CONFIG["seed"]),
        "threads": threads if threads is not None else CONFIG["threads"],
        "out_dir": out_dir if out_dir is not None else CONFIG["out_dir"],
    }

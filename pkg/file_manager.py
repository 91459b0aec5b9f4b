"""
File management for scenarios and output bundles
"""
import os
import logging
from functools import lru_cache
from typing import Dict, List, Optional

import pandas as pd

from config import CONFIG, load_scenario
from utils import ConfigError, validate_scenario_name

logger = logging.getLogger(__name__)


class FileManager:
    @staticmethod
    @lru_cache(maxsize=32)
    def list_scenarios(scenario_dir: Optional[str] = None) -> List[str]:
        """Names of the scenario files available in the scenario directory"""
        scenario_dir = scenario_dir or CONFIG["scenario_dir"]
        if not os.path.exists(scenario_dir):
            return []
        names = [f[:-5] for f in os.listdir(scenario_dir)
                 if f.endswith('.json') and not f.startswith('.')]
        return sorted(names)

    @staticmethod
    def resolve_scenario(name_or_path: str, scenario_dir: Optional[str] = None) -> str:
        """Accept either a path to a JSON file or the bare name of a bundled scenario"""
        if os.path.exists(name_or_path):
            return name_or_path
        if not validate_scenario_name(name_or_path):
            raise ConfigError(f"invalid scenario name: {name_or_path!r}")
        scenario_dir = scenario_dir or CONFIG["scenario_dir"]
        if name_or_path not in FileManager.list_scenarios(scenario_dir):
            raise ConfigError(f"scenario not found: {name_or_path}")
        return os.path.join(scenario_dir, f"{name_or_path}.json")

    @staticmethod
    def load(name_or_path: str) -> Dict:
        return load_scenario(FileManager.resolve_scenario(name_or_path))

    @staticmethod
    def ensure_out_dir(out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        return out_dir

    @staticmethod
    def write_table(rows: List[Dict], path: str, config_hash: str, columns: Optional[List[str]] = None) -> str:
        """Write a CSV table whose first line records the config hash"""
        frame = pd.DataFrame(rows, columns=columns)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(f"# config_sha256={config_hash}\n")
            frame.to_csv(f, index=False, float_format='%.17g')
        logger.info(f"📁 Wrote {len(frame)} rows to {path}")
        return path

    @staticmethod
    def read_table(path: str) -> pd.DataFrame:
        if not os.path.exists(path):
            raise ConfigError(f"table not found: {path}")
        return pd.read_csv(path, comment='#')

    @staticmethod
    def write_report(text: str, path: str) -> str:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text.rstrip() + "\n")
        logger.info(f"📁 Wrote report to {path}")
        return path

"""JSON run-configuration files for the CLI.

Schema (all sections optional; omitted fields keep their defaults):

    {
      "seed": 0,
      "study": {
        "n_users": 72, "t_decisions": 140, "recruit_per_week": 4,
        "update_cadence_decisions": 14, "effect_shrink_e": 0.0,
        "pi_min": 0.1, "pi_max": 0.9
      },
      "cost": {
        "xi1": 100.0, "xi2": 100.0, "b": 111.0,
        "a1": 0.5, "a2": 0.8, "gamma": 0.9285714285714286
      },
      "sweep": {
        "xi1_grid": [0, 20, ...], "xi2_grid": [0, 20, ...],
        "e_values": [0.0, 0.5, 0.8], "mc_trials": 100,
        "common_random_numbers": true, "workers": 1
      }
    }

Unknown sections or keys are rejected so typos fail loudly.
"""

import json
from dataclasses import replace
from pathlib import Path

from .features import CostParams
from .study import StudyConfig
from .sweep import SweepConfig

# Default grid used when a sweep section omits its own; fully configurable.
DEFAULT_XI_GRID = (0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0)

_STUDY_KEYS = {
    "n_users", "t_decisions", "recruit_per_week", "decisions_per_day",
    "update_cadence_decisions", "effect_shrink_e", "pi_min", "pi_max",
}
_COST_KEYS = {"xi1", "xi2", "b", "a1", "a2", "gamma"}
_SWEEP_KEYS = {
    "xi1_grid", "xi2_grid", "e_values", "mc_trials",
    "common_random_numbers", "workers",
}
_TOP_KEYS = {"seed", "study", "cost", "sweep"}


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"config file {path} must contain a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "top level")
    _reject_unknown(doc.get("study", {}), _STUDY_KEYS, "study section")
    _reject_unknown(doc.get("cost", {}), _COST_KEYS, "cost section")
    _reject_unknown(doc.get("sweep", {}), _SWEEP_KEYS, "sweep section")
    return doc


def _reject_unknown(section: dict, allowed: set[str], where: str):
    if not isinstance(section, dict):
        raise ValueError(f"config {where} must be a JSON object")
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(
            f"unknown config keys in {where}: {sorted(unknown)} "
            f"(allowed: {sorted(allowed)})"
        )


def study_config_from_doc(doc: dict, seed: int | None = None) -> StudyConfig:
    cost = CostParams(**doc.get("cost", {}))
    study = StudyConfig(cost_params=cost, **doc.get("study", {}))
    master_seed = seed if seed is not None else int(doc.get("seed", 0))
    return replace(study, master_seed=master_seed)


def sweep_config_from_doc(doc: dict, seed: int | None = None) -> SweepConfig:
    study = study_config_from_doc(doc, seed)
    section = dict(doc.get("sweep", {}))
    section.setdefault("xi1_grid", DEFAULT_XI_GRID)
    section.setdefault("xi2_grid", DEFAULT_XI_GRID)
    return SweepConfig(study=study, **section)

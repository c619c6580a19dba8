"""Run configuration: the full hyperparameter surface plus ablation presets.

The config file is a single YAML document with three sections (``database``,
``evolution``, ``models``) plus top-level ``seed`` and optional ``run_dir``.
Unknown keys are hard errors so that a typo cannot silently change an
experiment arm.
"""

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

PATCH_TYPES = ("diff", "full", "cross")
PARENT_STRATEGIES = ("power_law", "weighted", "uniform", "hill_climb", "best_of_n")
REJECTION_MODES = ("off", "embedding", "embedding_judge")

ABLATION_PRESETS = (
    "best_of_n",
    "hill_climb",
    "weighted",
    "single_llm",
    "fixed_ensemble",
    "bandit_ensemble",
    "no_rejection",
    "embed_rejection",
    "embed_plus_judge",
)

# Marker resolved against the base config when a preset cannot know the
# concrete value ahead of time (e.g. "keep only the first pool entry").
_FIRST_OF_POOL = "__first_of_pool__"


class ConfigError(ValueError):
    """Raised for any invalid or unknown configuration content."""


@dataclass
class DatabaseSection:
    archive_size: int = 40
    elite_ratio: float = 0.3  # protected fraction of island capacity
    num_islands: int = 2
    migration_interval: int = 10  # migrate every N generations
    migration_rate: float = 0.0  # fraction of island members per event
    island_elitism: bool = True  # island best never migrates
    parent_strategy: str = "weighted"
    alpha: float = 1.0  # power-law exponent (0 = uniform)
    selection_lambda: float = 10.0  # sigmoid pressure for weighted sampling
    num_archive_inspirations: int = 4
    num_top_k_inspirations: int = 2


@dataclass
class EvolutionSection:
    patch_types: List[str] = field(default_factory=lambda: ["diff", "full", "cross"])
    patch_type_probs: List[float] = field(default_factory=lambda: [0.45, 0.45, 0.1])
    generations: int = 150
    max_parallel_jobs: int = 5
    max_patch_resamples: int = 3  # provider calls per proposal chain
    max_patch_attempts: int = 3  # proposal chains per generation
    meta_interval: int = 10  # scratchpad refresh period, 0 disables
    max_meta_recommendations: int = 5
    embedding_model: Optional[str] = "hash-onehot:64"
    max_novelty_attempts: Optional[int] = None  # null = no dedicated cap
    similarity_threshold: float = 0.95
    rejection_mode: str = "embedding_judge"  # off | embedding | embedding_judge
    dynamic_selection: Optional[str] = "ucb1"  # ucb1 | null (uniform)
    exploration_coefficient: float = 1.0
    eval_program_path: str = ""
    job_timeout: float = 600.0  # seconds per evaluation job
    language: str = "python"
    task_instructions: str = ""  # task-specific guidance injected into prompts


@dataclass
class ModelsSection:
    pool: List[str] = field(default_factory=lambda: ["mock:vector:q=1.0"])
    temperatures: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.0])
    max_tokens: int = 16384
    meta_model: Optional[str] = "mock:meta"
    meta_temperature: float = 0.0
    novelty_judge_model: Optional[str] = "mock:judge-yes"
    judge_temperature: float = 0.0


@dataclass
class RunConfig:
    database: DatabaseSection = field(default_factory=DatabaseSection)
    evolution: EvolutionSection = field(default_factory=EvolutionSection)
    models: ModelsSection = field(default_factory=ModelsSection)
    seed: int = 0
    run_dir: Optional[str] = None

    def validate(self) -> None:
        db, ev, mo = self.database, self.evolution, self.models
        if db.archive_size < 1:
            raise ConfigError("database.archive_size must be >= 1")
        if not 0.0 <= db.elite_ratio <= 1.0:
            raise ConfigError("database.elite_ratio must be in [0, 1]")
        if db.num_islands < 1:
            raise ConfigError("database.num_islands must be >= 1")
        if db.migration_interval < 1:
            raise ConfigError("database.migration_interval must be >= 1")
        if not 0.0 <= db.migration_rate <= 1.0:
            raise ConfigError("database.migration_rate must be in [0, 1]")
        if db.parent_strategy not in PARENT_STRATEGIES:
            raise ConfigError(
                f"database.parent_strategy must be one of {PARENT_STRATEGIES}, "
                f"got {db.parent_strategy!r}"
            )
        if db.alpha < 0:
            raise ConfigError("database.alpha must be >= 0")
        if db.selection_lambda <= 0:
            raise ConfigError("database.selection_lambda must be > 0")
        if db.num_archive_inspirations < 0 or db.num_top_k_inspirations < 0:
            raise ConfigError("inspiration counts must be >= 0")

        if ev.generations < 1:
            raise ConfigError("evolution.generations must be >= 1")
        if len(ev.patch_types) != len(ev.patch_type_probs) or not ev.patch_types:
            raise ConfigError("patch_types and patch_type_probs must align and be nonempty")
        for pt in ev.patch_types:
            if pt not in PATCH_TYPES:
                raise ConfigError(f"unknown patch type {pt!r}")
        if any(p < 0 for p in ev.patch_type_probs):
            raise ConfigError("patch_type_probs must be nonnegative")
        if abs(sum(ev.patch_type_probs) - 1.0) > 1e-9:
            raise ConfigError("patch_type_probs must sum to 1 within 1e-9")
        if ev.max_parallel_jobs < 1:
            raise ConfigError("evolution.max_parallel_jobs must be >= 1")
        if ev.max_patch_resamples < 1:
            raise ConfigError("evolution.max_patch_resamples must be >= 1")
        if ev.max_patch_attempts < 1:
            raise ConfigError("evolution.max_patch_attempts must be >= 1")
        if ev.meta_interval < 0:
            raise ConfigError("evolution.meta_interval must be >= 0 (0 disables)")
        if ev.max_meta_recommendations < 0:
            raise ConfigError("evolution.max_meta_recommendations must be >= 0")
        if ev.max_novelty_attempts is not None and ev.max_novelty_attempts < 1:
            raise ConfigError("evolution.max_novelty_attempts must be >= 1 or null")
        if not 0.0 < ev.similarity_threshold <= 1.0:
            raise ConfigError("evolution.similarity_threshold must be in (0, 1]")
        if ev.rejection_mode not in REJECTION_MODES:
            raise ConfigError(f"evolution.rejection_mode must be one of {REJECTION_MODES}")
        if ev.dynamic_selection not in (None, "ucb1"):
            raise ConfigError("evolution.dynamic_selection must be 'ucb1' or null")
        if ev.exploration_coefficient < 0:
            raise ConfigError("evolution.exploration_coefficient must be >= 0")
        if ev.job_timeout <= 0:
            raise ConfigError("evolution.job_timeout must be > 0")
        if ev.rejection_mode != "off" and ev.embedding_model is None:
            raise ConfigError("embedding_model required unless rejection_mode is 'off'")

        if not mo.pool:
            raise ConfigError("models.pool must be nonempty")
        if not mo.temperatures:
            raise ConfigError("models.temperatures must be nonempty")
        for t in mo.temperatures:
            if not 0.0 <= t <= 2.0:
                raise ConfigError(f"temperature {t} outside [0, 2]")
        if mo.max_tokens < 1:
            raise ConfigError("models.max_tokens must be >= 1")
        if ev.rejection_mode == "embedding_judge" and mo.novelty_judge_model is None:
            raise ConfigError("novelty_judge_model required for rejection_mode embedding_judge")
        if ev.meta_interval > 0 and mo.meta_model is None:
            raise ConfigError("meta_model required when meta_interval > 0")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _build_section(cls, data: Dict[str, Any], path: str):
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {path}.{key!r}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid value under {path}: {exc}") from exc


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Build and validate a RunConfig from a nested plain dictionary."""
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    allowed_top = {"database", "evolution", "models", "seed", "run_dir"}
    for key in data:
        if key not in allowed_top:
            raise ConfigError(f"unknown top-level config key {key!r}")
    cfg = RunConfig(
        database=_build_section(DatabaseSection, data.get("database", {}) or {}, "database"),
        evolution=_build_section(EvolutionSection, data.get("evolution", {}) or {}, "evolution"),
        models=_build_section(ModelsSection, data.get("models", {}) or {}, "models"),
        seed=data.get("seed", 0),
        run_dir=data.get("run_dir"),
    )
    if not isinstance(cfg.seed, int):
        raise ConfigError("seed must be an integer")
    cfg.validate()
    return cfg


def load_config(path: Union[str, Path]) -> RunConfig:
    """Load a YAML config file; raises ConfigError on any invalid content."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(config: RunConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))


def ablation_presets(name: str) -> Dict[str, Any]:
    """Return the config override delta implementing a named ablation arm."""
    presets: Dict[str, Dict[str, Any]] = {
        "best_of_n": {"database": {"parent_strategy": "best_of_n"}},
        "hill_climb": {"database": {"parent_strategy": "hill_climb"}},
        "weighted": {"database": {"parent_strategy": "weighted"}},
        "single_llm": {
            "models": {"pool": _FIRST_OF_POOL},
            "evolution": {"dynamic_selection": None},
        },
        "fixed_ensemble": {"evolution": {"dynamic_selection": None}},
        "bandit_ensemble": {"evolution": {"dynamic_selection": "ucb1"}},
        "no_rejection": {"evolution": {"rejection_mode": "off"}},
        "embed_rejection": {"evolution": {"rejection_mode": "embedding"}},
        "embed_plus_judge": {"evolution": {"rejection_mode": "embedding_judge"}},
    }
    if name not in presets:
        raise ConfigError(
            f"unknown ablation preset {name!r}; available: {', '.join(sorted(presets))}"
        )
    return copy.deepcopy(presets[name])


def apply_overrides(config: RunConfig, delta: Dict[str, Any]) -> RunConfig:
    """Apply a nested override delta onto a config, returning a new RunConfig."""
    data = config.to_dict()
    for section, overrides in delta.items():
        if section not in data:
            raise ConfigError(f"unknown override section {section!r}")
        if isinstance(overrides, dict):
            for key, value in overrides.items():
                if key not in data[section]:
                    raise ConfigError(f"unknown override key {section}.{key!r}")
                if value == _FIRST_OF_POOL:
                    value = [data[section][key][0]]
                data[section][key] = value
        else:
            data[section] = overrides
    return config_from_dict(data)

"""Synthetic vector-optimization task for fast, fully offline runs.

The candidate program holds a parameter vector inside its mutable block;
fitness is the negated squared distance to a target vector. Paired with the
``mock:vector:q=<q>`` scripted mutator (which nudges one coordinate toward
the target with probability q, away otherwise) this gives end-to-end
evolution tests with a known optimum and deterministic dynamics.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

from ..config import RunConfig, config_from_dict

_INITIAL_CYCLE = [1.0, -0.8, 0.6, 1.2, -0.4]

EVALUATOR_TEMPLATE = '''\
#!/usr/bin/env python
"""Evaluator for the synthetic vector task (fitness = -||V - target||^2)."""

import argparse
import ast
import json
import sys

TARGET = {target!r}


def extract_vector(source):
    tree = ast.parse(source)
    for node in ast.walk(tree):
        if isinstance(node, ast.Assign):
            for target_node in node.targets:
                if isinstance(target_node, ast.Name) and target_node.id == "V":
                    value = ast.literal_eval(node.value)
                    return [float(x) for x in value]
    raise ValueError("no vector assignment 'V = [...]' found")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--program_path", required=True)
    parser.add_argument("--results_dir", required=True)
    args = parser.parse_args()

    with open(args.program_path) as handle:
        source = handle.read()
    vector = extract_vector(source)
    if len(vector) != len(TARGET):
        raise ValueError(
            f"vector has dimension {{len(vector)}}, expected {{len(TARGET)}}")
    distance_sq = sum((a - b) ** 2 for a, b in zip(vector, TARGET))
    metrics = {{
        "schema": "shinka-result/1",
        "combined_score": -distance_sq,
        "public": {{"distance_sq": distance_sq}},
        "private": {{"target_norm": sum(t * t for t in TARGET)}},
        "extra_data": None,
        "text_feedback": f"squared distance to target: {{distance_sq!r}}",
    }}
    with open(args.results_dir + "/metrics.json", "w") as handle:
        json.dump(metrics, handle, indent=2)


if __name__ == "__main__":
    main()
'''

PROGRAM_TEMPLATE = '''\
"""Candidate program: a parameter vector refined by evolution."""

# EVOLVE-BLOCK-START
V = {vector!r}
# EVOLVE-BLOCK-END


def solution():
    return V
'''


@dataclass
class SyntheticTask:
    dimension: int
    target: List[float]
    evaluator_path: Path
    initial_program_path: Path
    config_path: Optional[Path] = None


def initial_vector(dimension: int) -> List[float]:
    return [_INITIAL_CYCLE[i % len(_INITIAL_CYCLE)] for i in range(dimension)]


def make_task(out_dir: Union[str, Path], dimension: int = 3,
              target: Optional[List[float]] = None,
              initial: Optional[List[float]] = None,
              mutator_q: float = 1.0, generations: int = 50, seed: int = 7,
              write_config: bool = True) -> SyntheticTask:
    """Write the evaluator, initial program, and (optionally) a run config."""
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = list(target) if target is not None else [0.0] * dimension
    initial = list(initial) if initial is not None else initial_vector(dimension)
    if len(target) != dimension or len(initial) != dimension:
        raise ValueError("target/initial must match the dimension")

    evaluator_path = out / "evaluate.py"
    evaluator_path.write_text(EVALUATOR_TEMPLATE.format(target=target))
    program_path = out / "initial.py"
    program_path.write_text(PROGRAM_TEMPLATE.format(vector=initial))

    config_path = None
    if write_config:
        config = build_config(evaluator_path, mutator_q=mutator_q,
                              generations=generations, seed=seed)
        config_path = out / "config.yaml"
        from ..config import save_config

        save_config(config, config_path)
    return SyntheticTask(dimension=dimension, target=target,
                         evaluator_path=evaluator_path,
                         initial_program_path=program_path,
                         config_path=config_path)


def build_config(evaluator_path: Union[str, Path], mutator_q: float = 1.0,
                 generations: int = 50, seed: int = 7,
                 num_islands: int = 2, parent_strategy: str = "weighted",
                 rejection_mode: str = "embedding",
                 model_pool: Optional[List[str]] = None,
                 dynamic_selection: Optional[str] = None,
                 max_parallel_jobs: int = 1) -> RunConfig:
    """Offline-friendly config wired to the scripted mutator."""
    pool = model_pool or [f"mock:vector:q={mutator_q}"]
    return config_from_dict({
        "seed": seed,
        "database": {
            "archive_size": 20,
            "elite_ratio": 0.3,
            "num_islands": num_islands,
            "migration_interval": 10,
            "migration_rate": 0.0,
            "parent_strategy": parent_strategy,
            "selection_lambda": 10.0,
            "num_archive_inspirations": 2,
            "num_top_k_inspirations": 2,
        },
        "evolution": {
            "patch_types": ["diff"],
            "patch_type_probs": [1.0],
            "generations": generations,
            "max_parallel_jobs": max_parallel_jobs,
            "max_patch_resamples": 3,
            "max_patch_attempts": 3,
            "meta_interval": 0,
            "embedding_model": "hash-onehot:64",
            "similarity_threshold": 0.95,
            "rejection_mode": rejection_mode,
            "dynamic_selection": dynamic_selection,
            "eval_program_path": str(evaluator_path),
            "job_timeout": 60.0,
            "task_instructions": (
                "Adjust the vector V to minimize its distance to the hidden "
                "target; smaller squared distance scores higher."),
        },
        "models": {
            "pool": pool,
            "temperatures": [0.0],
            "max_tokens": 4096,
            "meta_model": "mock:meta",
            "novelty_judge_model": "mock:judge-no",
        },
    })

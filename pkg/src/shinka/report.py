"""Run reports: best program, fitness trajectory, evolution tree, bandit
history, and counters — all derivable from the event journal alone.

``build_report`` aggregates an event stream; ``replay`` reconstructs a
report from a journal file on disk; ``write_report_files`` emits the
tabular/graph artifacts.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .archive import ProgramRecord
from .journal import EventRecord, read_journal

TREE_SCHEMA = "shinka-tree/1"

COUNTER_KEYS = (
    "proposals",
    "proposal_failures",
    "parse_retries",
    "patch_rejects",
    "novelty_rejects",
    "eval_failures",
    "inserts",
    "migrations",
    "meta_refreshes",
)


@dataclass
class RunReport:
    best_program: Optional[ProgramRecord]
    fitness_trajectory: List[float]  # best-so-far per generation, index 0 = seed
    evolution_tree: List[Tuple[str, str, str]]  # (parent_id, child_id, edge kind)
    bandit_history: List[Dict]
    counters: Dict[str, int] = field(default_factory=dict)
    tree_nodes: List[Dict] = field(default_factory=list)  # per-program node attrs


def count_events(events: Sequence[EventRecord]) -> Dict[str, int]:
    counters = {key: 0 for key in COUNTER_KEYS}
    for event in events:
        if event.kind == "proposal":
            counters["proposals"] += 1
            if event.payload.get("status") != "ok":
                counters["proposal_failures"] += 1
        elif event.kind == "parse_retry":
            counters["parse_retries"] += 1
        elif event.kind == "patch_reject":
            counters["patch_rejects"] += 1
        elif event.kind == "novelty_reject":
            counters["novelty_rejects"] += 1
        elif event.kind == "eval_fail":
            counters["eval_failures"] += 1
        elif event.kind == "insert":
            counters["inserts"] += 1
        elif event.kind == "migration":
            counters["migrations"] += 1
        elif event.kind == "meta_refresh":
            counters["meta_refreshes"] += 1
    return counters


def build_report(events: Sequence[EventRecord], generations: int) -> RunReport:
    """Aggregate an event stream into a RunReport.

    The trajectory entry for generation g is the best fitness over all
    archived programs proposed at or before g, so it is monotone
    non-decreasing by construction.
    """
    records: List[ProgramRecord] = []
    for event in events:
        if event.kind == "insert":
            records.append(ProgramRecord.from_dict(event.payload["record"]))

    best: Optional[ProgramRecord] = None
    for record in records:
        if best is None or ((-record.fitness, record.created_at, record.id)
                            < (-best.fitness, best.created_at, best.id)):
            best = record

    trajectory: List[float] = []
    best_so_far = float("-inf")
    by_generation: Dict[int, List[float]] = {}
    for record in records:
        by_generation.setdefault(record.generation, []).append(record.fitness)
    for generation in range(generations + 1):
        for fitness in by_generation.get(generation, []):
            best_so_far = max(best_so_far, fitness)
        trajectory.append(best_so_far)

    tree: List[Tuple[str, str, str]] = []
    for record in records:
        if record.parent_id is not None:
            tree.append((record.parent_id, record.id, "parent"))
        if record.crossover_partner_id is not None:
            tree.append((record.crossover_partner_id, record.id, "crossover"))

    bandit_history = [dict(event.payload, generation=event.generation)
                      for event in events if event.kind == "bandit_update"]

    tree_nodes = [{
        "id": record.id,
        "generation": record.generation,
        "fitness": record.fitness,
        "island_id": record.island_id,
        "model_name": record.model_name,
        "patch_type": record.patch_type,
    } for record in records]

    return RunReport(best_program=best, fitness_trajectory=trajectory,
                     evolution_tree=tree, bandit_history=bandit_history,
                     counters=count_events(events), tree_nodes=tree_nodes)


def replay(journal_path: Union[str, Path], generations: Optional[int] = None
           ) -> RunReport:
    """Reconstruct the run report purely from the journal file."""
    header, events = read_journal(journal_path)
    if generations is None:
        generations = header.get("generations") or max(
            (event.generation for event in events), default=0)
    return build_report(events, generations)


def write_report_files(report: RunReport, out_dir: Union[str, Path],
                       language: str = "python") -> List[Path]:
    """Emit trajectory, tree, bandit history, best program, and a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    trajectory_path = out / "trajectory.csv"
    with open(trajectory_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["generation", "best_so_far"])
        for generation, value in enumerate(report.fitness_trajectory):
            writer.writerow([generation, repr(value)])
    written.append(trajectory_path)

    tree_path = out / "tree.json"
    tree_path.write_text(json.dumps({
        "schema": TREE_SCHEMA,
        "nodes": report.tree_nodes,
        "edges": [{"parent": p, "child": c, "kind": k}
                  for p, c, k in report.evolution_tree],
    }, indent=2) + "\n")
    written.append(tree_path)

    bandit_path = out / "bandit_history.csv"
    with open(bandit_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["generation", "arm", "draws", "visits", "mean_reward",
                         "share"])
        for row in report.bandit_history:
            for arm, stats in sorted(row.get("arms", {}).items()):
                writer.writerow([row["generation"], arm, stats["draws"],
                                 stats["visits"], repr(stats["mean_reward"]),
                                 repr(stats["share"])])
    written.append(bandit_path)

    if report.best_program is not None:
        ext = {"python": "py", "cpp": "cpp", "c++": "cpp"}.get(language, "txt")
        best_path = out / f"best_program.{ext}"
        best_path.write_text(report.best_program.code)
        written.append(best_path)

    summary_path = out / "summary.json"
    summary = {
        "counters": report.counters,
        "generations": len(report.fitness_trajectory) - 1,
        "best_fitness": (report.best_program.fitness
                         if report.best_program else None),
        "best_id": report.best_program.id if report.best_program else None,
    }
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(summary_path)
    return written

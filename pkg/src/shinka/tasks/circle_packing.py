"""Circle packing task: place 26 circles in the unit square maximizing the
sum of radii.

This module is both a library (verifier and scorer) and the evaluation
executable for the scheduler: running it with ``--program_path`` and
``--results_dir`` executes the candidate program in a subprocess, reads the
packing it wrote, verifies it with numerical slack, and emits the metrics
file. Distances use math.hypot to keep verdicts stable near the slack
boundary.
"""

import argparse
import json
import math
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

CIRCLE_COUNT = 26
DEFAULT_SLACK = 1e-6
PACKING_FILENAME = "packing.txt"
RESULT_SCHEMA = "shinka-result/1"


class PackingError(ValueError):
    """Malformed packing input (wrong count, nonpositive radius)."""


@dataclass
class Violation:
    kind: str  # containment | overlap
    circles: Tuple[int, ...]  # offending index or pair
    magnitude: float  # how far past the constraint, before slack

    def describe(self) -> str:
        which = ",".join(str(i) for i in self.circles)
        return f"{self.kind}[{which}]: exceeds by {self.magnitude:.3e}"


@dataclass
class Packing:
    circles: List[Tuple[float, float, float]]  # (x, y, r)
    slack: float = 0.0  # tolerance this packing is expected to satisfy

    @property
    def radii(self) -> List[float]:
        return [r for _, _, r in self.circles]


def verify_packing(packing: Packing, slack: float,
                   expected_count: int = CIRCLE_COUNT
                   ) -> Tuple[bool, List[Violation]]:
    """Check containment and pairwise non-overlap within ``slack``.

    Returns every violation with its magnitude; slack 0 is the exact
    verifier. Raises PackingError on the wrong circle count or r <= 0.
    """
    if slack < 0:
        raise PackingError("slack must be >= 0")
    circles = packing.circles
    if len(circles) != expected_count:
        raise PackingError(
            f"expected {expected_count} circles, got {len(circles)}")
    for index, (_, _, r) in enumerate(circles):
        if not r > 0:
            raise PackingError(f"circle {index} has nonpositive radius {r!r}")

    violations: List[Violation] = []
    for index, (x, y, r) in enumerate(circles):
        worst = max(r - x, x + r - 1.0, r - y, y + r - 1.0)
        if worst > slack:
            violations.append(Violation("containment", (index,), worst))
    for i in range(len(circles)):
        xi, yi, ri = circles[i]
        for j in range(i + 1, len(circles)):
            xj, yj, rj = circles[j]
            gap = (ri + rj) - math.hypot(xi - xj, yi - yj)
            if gap > slack:
                violations.append(Violation("overlap", (i, j), gap))
    return (not violations), violations


def packing_score(packing: Packing, slack: float = DEFAULT_SLACK,
                  expected_count: int = CIRCLE_COUNT) -> Tuple[float, str]:
    """Sum of radii when valid; 0 with violation feedback otherwise."""
    valid, violations = verify_packing(packing, slack, expected_count)
    if not valid:
        feedback = "invalid packing:\n" + "\n".join(
            v.describe() for v in violations[:20])
        if len(violations) > 20:
            feedback += f"\n... and {len(violations) - 20} more"
        return 0.0, feedback
    total = sum(packing.radii)
    return total, f"valid packing of {expected_count} circles, sum of radii {total!r}"


GAP_EPSILON = 1e-12  # clearance so exact-arithmetic tangency survives floats


def grid_gap_packing() -> Packing:
    """Reference construction: a 5x5 grid of radius-0.1 circles plus a 26th
    circle of radius 0.1*(sqrt(2)-1) nested in the first grid gap.

    Every radius is shrunk by GAP_EPSILON: the exact-arithmetic construction
    is tangent everywhere, and rounding of the grid centers would otherwise
    leave sub-1e-16 overlaps that the slack-0 verifier rejects."""
    circles = [(0.1 + 0.2 * i, 0.1 + 0.2 * j, 0.1 - GAP_EPSILON)
               for i in range(5) for j in range(5)]
    circles.append((0.2, 0.2, 0.1 * (math.sqrt(2) - 1.0) - GAP_EPSILON))
    return Packing(circles=circles)


def read_packing_file(path: Path, expected_count: int = CIRCLE_COUNT) -> Packing:
    """Parse the candidate output: one 'x y r' line per circle."""
    circles: List[Tuple[float, float, float]] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise PackingError(f"{path}:{lineno}: expected 'x y r', got {line!r}")
        try:
            x, y, r = (float(p) for p in parts)
        except ValueError as exc:
            raise PackingError(f"{path}:{lineno}: {exc}") from exc
        circles.append((x, y, r))
    if len(circles) != expected_count:
        raise PackingError(
            f"{path}: expected {expected_count} circles, got {len(circles)}")
    return Packing(circles=circles)


INITIAL_PROGRAM = '''"""Circle packing candidate: writes one "x y r" line per circle."""

import math
import sys


# EVOLVE-BLOCK-START
def pack_circles():
    """Return 26 circles (x, y, r) inside the unit square."""
    circles = [(0.1 + 0.2 * i, 0.1 + 0.2 * j, 0.1 - 1e-12)
               for i in range(5) for j in range(5)]
    circles.append((0.2, 0.2, 0.1 * (math.sqrt(2) - 1.0) - 1e-12))
    return circles
# EVOLVE-BLOCK-END


def main():
    results_dir = sys.argv[1]
    lines = [f"{x!r} {y!r} {r!r}" for x, y, r in pack_circles()]
    with open(results_dir + "/packing.txt", "w") as handle:
        handle.write("\\n".join(lines) + "\\n")


if __name__ == "__main__":
    main()
'''


def write_initial_program(path: Path) -> Path:
    path = Path(path)
    path.write_text(INITIAL_PROGRAM)
    return path


def evaluate(program_path: str, results_dir: str,
             slack: float = DEFAULT_SLACK, candidate_timeout: float = 120.0) -> dict:
    """Run the candidate, verify its packing, and write metrics.json."""
    results = Path(results_dir)
    results.mkdir(parents=True, exist_ok=True)
    completed = subprocess.run(
        [sys.executable, program_path, str(results)],
        capture_output=True, text=True, timeout=candidate_timeout)
    if completed.returncode != 0:
        raise RuntimeError(
            f"candidate exited with {completed.returncode}\n"
            f"stdout:\n{completed.stdout}\nstderr:\n{completed.stderr}")
    packing_path = results / PACKING_FILENAME
    if not packing_path.exists():
        raise RuntimeError(f"candidate wrote no {PACKING_FILENAME}")

    try:
        packing = read_packing_file(packing_path)
        score, feedback = packing_score(packing, slack=slack)
        valid = score > 0.0
        radii_sum = sum(packing.radii)
    except PackingError as exc:
        score, feedback, valid, radii_sum = 0.0, f"bad packing output: {exc}", False, 0.0

    metrics = {
        "schema": RESULT_SCHEMA,
        "combined_score": score,
        "public": {
            "sum_radii": radii_sum,
            "valid": 1.0 if valid else 0.0,
            "num_circles": float(CIRCLE_COUNT),
        },
        "private": {"slack": slack},
        "extra_data": PACKING_FILENAME,
        "text_feedback": feedback,
    }
    (results / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    return metrics


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="circle packing evaluator")
    parser.add_argument("--program_path", required=True)
    parser.add_argument("--results_dir", required=True)
    parser.add_argument("--slack", type=float, default=DEFAULT_SLACK)
    args = parser.parse_args(argv)
    evaluate(args.program_path, args.results_dir, slack=args.slack)
    return 0


if __name__ == "__main__":
    sys.exit(main())

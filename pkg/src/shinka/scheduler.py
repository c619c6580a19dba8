"""Subprocess evaluation scheduler with bounded parallelism.

Candidate programs are written into per-generation workspace directories and
executed by an external evaluator (``<eval_executable> --program_path <p>
--results_dir <d>``), never inside the engine's own process. Up to
``max_parallel_jobs`` evaluations run concurrently; results are collected in
submission order over an ordered channel, which keeps whole runs
deterministic regardless of how job wall-times interleave.
"""

import json
import logging
import math
import subprocess
import sys
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple, Union

logger = logging.getLogger(__name__)

RESULT_SCHEMA = "shinka-result/1"
METRICS_FILENAME = "metrics.json"

_EXTENSIONS = {"python": "py", "cpp": "cpp", "c++": "cpp"}


class SchedulerError(Exception):
    pass


@dataclass
class EvaluationJob:
    job_id: str
    generation: int
    program_path: str
    results_dir: str
    state: str = "queued"  # queued -> running -> done | failed
    timeout: float = 600.0


@dataclass
class EvaluationResult:
    combined_score: float
    public_metrics: Dict[str, float] = field(default_factory=dict)
    private_metrics: Dict[str, float] = field(default_factory=dict)
    text_feedback: str = ""
    extra_data_path: Optional[str] = None
    runtime_seconds: float = 0.0


@dataclass
class EvaluationFailure:
    reason: str  # timeout | nonzero_exit | missing_results | parse
    text_feedback: str = ""  # captured stdout/stderr for the failure journal
    runtime_seconds: float = 0.0


def parse_result_file(results_dir: Union[str, Path]) -> EvaluationResult:
    """Parse the evaluator's metrics file, validating the wire format."""
    path = Path(results_dir) / METRICS_FILENAME
    if not path.exists():
        raise SchedulerError(f"no {METRICS_FILENAME} in {results_dir}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchedulerError(f"{path}: invalid JSON: {exc}") from exc
    if "schema" in data and data["schema"] != RESULT_SCHEMA:
        raise SchedulerError(
            f"{path}: expected schema {RESULT_SCHEMA!r}, got {data['schema']!r}")
    if "combined_score" not in data:
        raise SchedulerError(f"{path}: missing combined_score")
    score = data["combined_score"]
    if not isinstance(score, (int, float)) or not math.isfinite(float(score)):
        raise SchedulerError(f"{path}: combined_score must be finite, got {score!r}")
    return EvaluationResult(
        combined_score=float(score),
        public_metrics=dict(data.get("public") or {}),
        private_metrics=dict(data.get("private") or {}),
        text_feedback=str(data.get("text_feedback") or ""),
        extra_data_path=data.get("extra_data"),
    )


class EvaluationScheduler:
    """Worker pool wrapper around the external evaluator.

    ``submit`` is non-blocking; ``collect_next`` blocks on the oldest
    outstanding job so completions are consumed FIFO. The ``high_water``
    counter instruments the maximum observed concurrency.
    """

    def __init__(self, eval_program_path: Union[str, Path],
                 workspace_dir: Union[str, Path], max_parallel_jobs: int = 1,
                 timeout: float = 600.0, language: str = "python"):
        self.eval_program_path = Path(eval_program_path)
        if not self.eval_program_path.exists():
            raise SchedulerError(
                f"evaluation executable not found: {self.eval_program_path}")
        self.workspace_dir = Path(workspace_dir)
        self.workspace_dir.mkdir(parents=True, exist_ok=True)
        self.max_parallel_jobs = max_parallel_jobs
        self.timeout = timeout
        self.extension = _EXTENSIONS.get(language, "txt")
        self._executor = ThreadPoolExecutor(max_workers=max_parallel_jobs)
        self._pending: deque = deque()  # (job, future) in submission order
        self._lock = threading.Lock()
        self._running = 0
        self.high_water = 0
        self.counts = {"queued": 0, "running": 0, "done": 0, "failed": 0}

    # -- lifecycle -------------------------------------------------------------

    def submit(self, code: str, generation: int,
               job_id: Optional[str] = None) -> EvaluationJob:
        """Write the candidate into an isolated directory and queue it."""
        job_id = job_id or f"job-{generation:05d}"
        job_dir = self.workspace_dir / f"gen_{generation}"
        results_dir = job_dir / "results"
        results_dir.mkdir(parents=True, exist_ok=True)
        program_path = job_dir / f"program.{self.extension}"
        try:
            program_path.write_text(code)
        except OSError as exc:
            raise SchedulerError(f"cannot write candidate to {job_dir}: {exc}") from exc
        job = EvaluationJob(job_id=job_id, generation=generation,
                            program_path=str(program_path),
                            results_dir=str(results_dir), timeout=self.timeout)
        with self._lock:
            self.counts["queued"] += 1
        future = self._executor.submit(self._run_job, job)
        self._pending.append((job, future))
        return job

    def pending_count(self) -> int:
        return len(self._pending)

    def collect_next(self) -> Tuple[EvaluationJob, Union[EvaluationResult,
                                                         EvaluationFailure]]:
        """Block on and return the oldest outstanding job's outcome."""
        if not self._pending:
            raise SchedulerError("no pending jobs to collect")
        job, future = self._pending.popleft()
        outcome = future.result()
        return job, outcome

    def drain(self) -> Iterator[Tuple[EvaluationJob, Union[EvaluationResult,
                                                           EvaluationFailure]]]:
        while self._pending:
            yield self.collect_next()

    def shutdown(self) -> None:
        self._executor.shutdown(wait=True)

    # -- worker ------------------------------------------------------------------

    def _command(self, job: EvaluationJob) -> list:
        head = [str(self.eval_program_path)]
        if self.eval_program_path.suffix == ".py":
            head = [sys.executable, str(self.eval_program_path)]
        return head + ["--program_path", job.program_path,
                       "--results_dir", job.results_dir]

    def _run_job(self, job: EvaluationJob) -> Union[EvaluationResult,
                                                    EvaluationFailure]:
        with self._lock:
            self.counts["queued"] -= 1
            self.counts["running"] += 1
            self._running += 1
            self.high_water = max(self.high_water, self._running)
        job.state = "running"
        started = time.monotonic()
        try:
            completed = subprocess.run(
                self._command(job), capture_output=True, text=True,
                timeout=job.timeout)
        except subprocess.TimeoutExpired as exc:
            elapsed = time.monotonic() - started
            stderr = exc.stderr if isinstance(exc.stderr, str) else ""
            return self._finish(job, EvaluationFailure(
                reason="timeout",
                text_feedback=f"evaluation timed out after {job.timeout}s\n{stderr}",
                runtime_seconds=elapsed))
        except OSError as exc:
            elapsed = time.monotonic() - started
            return self._finish(job, EvaluationFailure(
                reason="nonzero_exit",
                text_feedback=f"could not launch evaluator: {exc}",
                runtime_seconds=elapsed))
        elapsed = time.monotonic() - started
        if completed.returncode != 0:
            return self._finish(job, EvaluationFailure(
                reason="nonzero_exit",
                text_feedback=(f"evaluator exited with {completed.returncode}\n"
                               f"stdout:\n{completed.stdout}\n"
                               f"stderr:\n{completed.stderr}"),
                runtime_seconds=elapsed))
        try:
            result = parse_result_file(job.results_dir)
        except SchedulerError as exc:
            return self._finish(job, EvaluationFailure(
                reason="parse",
                text_feedback=f"{exc}\nstdout:\n{completed.stdout}\n"
                              f"stderr:\n{completed.stderr}",
                runtime_seconds=elapsed))
        result.runtime_seconds = elapsed
        return self._finish(job, result)

    def _finish(self, job: EvaluationJob, outcome):
        ok = isinstance(outcome, EvaluationResult)
        job.state = "done" if ok else "failed"
        with self._lock:
            self.counts["running"] -= 1
            self._running -= 1
            self.counts["done" if ok else "failed"] += 1
        return outcome

"""Top-level evolution loop: seed, then sample -> mutate -> filter ->
evaluate -> insert -> bandit update, with migration and scratchpad refreshes
on their intervals and a checkpoint every generation.

Proposals are strictly sequential; evaluations overlap up to
``max_parallel_jobs`` deep. Results are consumed in submission order (the
scheduler's ordered channel), so a proposal at generation g reflects every
job submitted at or before g - max_parallel_jobs, and a whole run is a pure
function of (seed, config, provider transcripts).
"""

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

from . import scratchpad as scratchpad_mod
from .archive import Archive, MutationContext, ProgramRecord
from .bandit import BanditState, transform_reward
from .config import ConfigError, RunConfig, load_config, save_config
from .gateway import (LLMGateway, ModelSpec, ProviderError, ReplaySource,
                      TranscriptRecorder, TripwireChatProvider,
                      build_embedding_provider)
from .journal import Journal, read_journal, truncate_journal
from .mutation import (BlockParseError, ProposalFailure, ProposalLimits,
                       draw_patch_type, parse_blocks, propose_with_retries)
from .novelty import check_novelty
from .report import RunReport, build_report, write_report_files
from .sampling import SelectionStrategy
from .scheduler import (EvaluationFailure, EvaluationResult,
                        EvaluationScheduler, SchedulerError)

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "shinka-checkpoint/1"


class RunError(RuntimeError):
    """Unrecoverable failure after configuration was accepted (exit code 3)."""


@dataclass
class _PendingMeta:
    job_id: str
    generation: int
    child_id: str
    code: str
    mutable_code: str
    parent_id: str
    partner_id: Optional[str]
    island_id: int
    patch_type: str
    model_name: str
    temperature: float
    parent_fitness: float
    embedding: Optional[List[float]]

    def to_dict(self) -> Dict:
        return dict(vars(self))


class EvolutionRunner:
    """Single coordinator driving one evolution run."""

    def __init__(self, config: RunConfig, init_program_path: Union[str, Path],
                 run_dir: Optional[Union[str, Path]] = None,
                 replay_path: Optional[Union[str, Path]] = None,
                 preset: Optional[str] = None,
                 stop_after_generation: Optional[int] = None):
        self.config = config
        self.init_program_path = Path(init_program_path)
        self.run_dir = Path(run_dir or config.run_dir or f"runs/run-{config.seed}")
        self.replay_path = str(replay_path) if replay_path else None
        self.preset = preset
        self.stop_after_generation = stop_after_generation
        self._resuming = False

    # -- construction helpers --------------------------------------------------

    def _build_gateway(self) -> LLMGateway:
        ev = self.config.evolution
        embedder = (build_embedding_provider(ev.embedding_model, self.config.seed)
                    if ev.embedding_model else None)
        if self.replay_path:
            return LLMGateway(
                chat_provider=TripwireChatProvider(),
                embedding_provider=None,
                replay=ReplaySource(self.replay_path),
                seed=self.config.seed)
        recorder = TranscriptRecorder(self.run_dir / "transcripts.jsonl")
        return LLMGateway(embedding_provider=embedder, recorder=recorder,
                          seed=self.config.seed)

    def _model_pool(self) -> List[ModelSpec]:
        mo = self.config.models
        return [ModelSpec(name=name, temperatures=list(mo.temperatures),
                          max_tokens=mo.max_tokens) for name in mo.pool]

    def _setup_fresh(self) -> None:
        cfg = self.config
        self.run_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, self.run_dir / "config.yaml")
        self.rng = random.Random(cfg.seed)
        self.archive = Archive(
            num_islands=cfg.database.num_islands,
            archive_size=cfg.database.archive_size,
            elite_ratio=cfg.database.elite_ratio,
            island_elitism=cfg.database.island_elitism)
        self.strategy = SelectionStrategy(
            kind=cfg.database.parent_strategy, alpha=cfg.database.alpha,
            selection_lambda=cfg.database.selection_lambda)
        self.bandit = None
        if cfg.evolution.dynamic_selection == "ucb1":
            self.bandit = BanditState(
                arm_names=list(cfg.models.pool),
                exploration_coefficient=cfg.evolution.exploration_coefficient)
        self.gateway = self._build_gateway()
        self.journal = Journal(self.run_dir / "journal.jsonl", header={
            "run_id": self.run_dir.name,
            "seed": cfg.seed,
            "preset": self.preset,
            "generations": cfg.evolution.generations,
            "config_sha256": cfg.sha256(),
        })
        try:
            self.scheduler = EvaluationScheduler(
                eval_program_path=cfg.evolution.eval_program_path,
                workspace_dir=self.run_dir,
                max_parallel_jobs=cfg.evolution.max_parallel_jobs,
                timeout=cfg.evolution.job_timeout,
                language=cfg.evolution.language)
        except SchedulerError as exc:
            raise ConfigError(str(exc)) from exc
        self.scratchpad = scratchpad_mod.Scratchpad()
        self.pending_meta: List[_PendingMeta] = []
        self.seed_ids: Dict[int, str] = {}
        self.initial_fitness = 0.0
        self.start_generation = 1

    # -- journaling --------------------------------------------------------------

    def _emit(self, generation: int, kind: str, payload: Dict) -> None:
        try:
            self.journal.append(generation, kind, payload, ts=self.archive.tick())
        except OSError as exc:
            # Disk trouble: leave a consistent checkpoint, then abort.
            logger.error("journal write failed (%s); checkpointing and aborting", exc)
            self._checkpoint(generation)
            raise RunError(f"journal write failed: {exc}") from exc

    # -- seeding -------------------------------------------------------------------

    def _seed_archive(self) -> None:
        try:
            init_code = self.init_program_path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read initial program: {exc}") from exc
        try:
            blocks = parse_blocks(init_code)
        except BlockParseError as exc:
            raise ConfigError(f"initial program has invalid EVOLVE blocks: {exc}")

        job = self.scheduler.submit(init_code, generation=0, job_id="job-seed")
        self._emit(0, "eval_start", {"job_id": job.job_id, "generation": 0})
        _, outcome = self.scheduler.collect_next()
        if isinstance(outcome, EvaluationFailure):
            self._emit(0, "eval_fail", {"job_id": job.job_id,
                                        "reason": outcome.reason,
                                        "feedback": outcome.text_feedback})
            raise RunError(
                f"initial program evaluation failed ({outcome.reason}):\n"
                f"{outcome.text_feedback}")
        self._emit(0, "eval_done", {"job_id": job.job_id,
                                    "combined_score": outcome.combined_score,
                                    "public_metrics": outcome.public_metrics,
                                    "text_feedback": outcome.text_feedback})
        self.initial_fitness = outcome.combined_score

        embedding = None
        if self._novelty_enabled():
            embedding = self.gateway.embed(self.config.evolution.embedding_model,
                                           blocks.mutable_code)
        for island in range(self.archive.num_islands):
            record = ProgramRecord(
                id=f"init-{island}", parent_id=None, crossover_partner_id=None,
                island_id=island, generation=0, code=init_code,
                mutable_code=blocks.mutable_code,
                fitness=outcome.combined_score,
                public_metrics=dict(outcome.public_metrics),
                text_feedback=outcome.text_feedback,
                embedding=list(embedding) if embedding is not None else None,
                model_name="", patch_type="init",
                created_at=self.archive.tick())
            self.archive.insert(record)
            self.seed_ids[island] = record.id
            self._emit(0, "insert", {"record": record.to_dict(), "evicted": None})

    def _novelty_enabled(self) -> bool:
        return (self.config.evolution.rejection_mode != "off"
                and self.config.evolution.embedding_model is not None)

    # -- collection --------------------------------------------------------------

    def _collect_one(self, loop_generation: int) -> None:
        job, outcome = self.scheduler.collect_next()
        meta = self.pending_meta.pop(0)
        assert meta.job_id == job.job_id
        if isinstance(outcome, EvaluationResult):
            record = ProgramRecord(
                id=meta.child_id, parent_id=meta.parent_id,
                crossover_partner_id=meta.partner_id, island_id=meta.island_id,
                generation=meta.generation, code=meta.code,
                mutable_code=meta.mutable_code,
                fitness=outcome.combined_score,
                public_metrics=dict(outcome.public_metrics),
                text_feedback=outcome.text_feedback,
                embedding=meta.embedding, model_name=meta.model_name,
                patch_type=meta.patch_type,
                created_at=self.archive.tick())
            self._emit(loop_generation, "eval_done", {
                "job_id": job.job_id, "child_id": meta.child_id,
                "combined_score": outcome.combined_score,
                "public_metrics": outcome.public_metrics,
                "text_feedback": outcome.text_feedback})
            evicted = self.archive.insert(record)
            self._emit(loop_generation, "insert",
                       {"record": record.to_dict(), "evicted": evicted})
            reward = transform_reward(outcome.combined_score,
                                      meta.parent_fitness, self.initial_fitness)
        else:
            self._emit(loop_generation, "eval_fail", {
                "job_id": job.job_id, "child_id": meta.child_id,
                "reason": outcome.reason, "feedback": outcome.text_feedback})
            reward = 0.0  # a crashing mutation is a non-improvement
        if self.bandit is not None:
            self.bandit.update(meta.model_name, reward)
            shares = self.bandit.selection_shares()
            self._emit(loop_generation, "bandit_update", {
                "arm": meta.model_name, "transformed_reward": reward,
                "arms": {name: {"draws": a.draws, "visits": a.visits,
                                "mean_reward": self.bandit.normalized_mean(name),
                                "share": shares[name]}
                         for name, a in self.bandit.arms.items()}})

    # -- one generation -------------------------------------------------------------

    def _run_generation(self, generation: int) -> None:
        cfg = self.config
        ev = cfg.evolution

        while self.pending_meta and len(self.pending_meta) >= ev.max_parallel_jobs:
            self._collect_one(generation)

        moves = self.archive.migrate(generation, cfg, self.rng)
        if moves:
            self._emit(generation, "migration",
                       {"moves": [[rid, src, dst] for rid, src, dst in moves]})

        if (ev.meta_interval > 0 and generation % ev.meta_interval == 0
                and cfg.models.meta_model):
            self._refresh_scratchpad(generation)

        ctx = self.archive.sample_context(cfg, self.rng, strategy=self.strategy,
                                          seed_ids=self.seed_ids)
        patch_type = draw_patch_type(ev.patch_types, ev.patch_type_probs, self.rng)
        partner_id = None
        if patch_type == "cross":
            partner_id = self.archive.sample_crossover_partner(
                ctx.island_id, ctx.parent.id, self.strategy, self.rng)
            if partner_id is None:
                patch_type = "full"  # single-member island cannot cross
            else:
                ctx.crossover_partner = self.archive.get(partner_id)

        pool = self._model_pool()
        spec, temperature = self.gateway.sample_model(pool, self.rng, self.bandit)

        outcome = self._propose_and_filter(generation, ctx, patch_type,
                                           spec, temperature)
        payload = {
            "parent_id": ctx.parent.id,
            "partner_id": partner_id,
            "island_id": ctx.island_id,
            "patch_type": patch_type,
            "model": spec.name,
            "temperature": temperature,
            "top_k_ids": [r.id for r in ctx.top_k_inspirations],
            "random_ids": [r.id for r in ctx.random_inspirations],
            "visible_inserts": sum(1 for e in self.journal.events
                                   if e.kind == "insert"),
        }
        if outcome is None:
            payload["status"] = "failed"
            self._emit(generation, "proposal", payload)
            return
        child_code, mutable_code, embedding = outcome
        child_id = f"prog-{generation:05d}"
        payload["status"] = "ok"
        payload["child_id"] = child_id
        self._emit(generation, "proposal", payload)

        job = self.scheduler.submit(child_code, generation)
        self._emit(generation, "eval_start", {"job_id": job.job_id,
                                              "generation": generation})
        self.pending_meta.append(_PendingMeta(
            job_id=job.job_id, generation=generation, child_id=child_id,
            code=child_code, mutable_code=mutable_code,
            parent_id=ctx.parent.id, partner_id=partner_id,
            island_id=ctx.island_id, patch_type=patch_type,
            model_name=spec.name, temperature=temperature,
            parent_fitness=ctx.parent.fitness, embedding=embedding))

    def _propose_and_filter(self, generation: int, ctx: MutationContext,
                            patch_type: str, spec: ModelSpec,
                            temperature: float):
        """Propose with retries, then novelty-check; returns
        (child_code, mutable_code, embedding) or None when the generation
        fails to produce an evaluable program."""
        ev = self.config.evolution
        limits = ProposalLimits(max_patch_resamples=ev.max_patch_resamples,
                                max_patch_attempts=ev.max_patch_attempts)
        scratch_text = scratchpad_mod.render(self.scratchpad)

        def on_event(kind: str, payload: Dict) -> None:
            self._emit(generation, kind, payload)

        novelty_rejections = 0
        extra_feedback = ""
        for attempt in range(1, ev.max_patch_attempts + 1):
            try:
                proposed = propose_with_retries(
                    ctx, patch_type,
                    complete=lambda p: self.gateway.complete(spec, temperature, p),
                    limits=limits, model_name=spec.name, temperature=temperature,
                    scratchpad_text=scratch_text,
                    language=ev.language,
                    task_instructions=ev.task_instructions,
                    extra_feedback=extra_feedback, on_event=on_event)
            except ProviderError as exc:
                logger.error("generation %d: provider failure: %s", generation, exc)
                return None
            if isinstance(proposed, ProposalFailure):
                continue

            child_code = proposed.child_code
            mutable_code = parse_blocks(child_code).mutable_code
            embedding = None
            if self._novelty_enabled():
                embedding = self.gateway.embed(ev.embedding_model, mutable_code)
                judge = None
                if (ev.rejection_mode == "embedding_judge"
                        and self.config.models.novelty_judge_model):
                    judge_spec = ModelSpec(
                        name=self.config.models.novelty_judge_model,
                        temperatures=[self.config.models.judge_temperature],
                        max_tokens=self.config.models.max_tokens)
                    judge = lambda p: self.gateway.complete(  # noqa: E731
                        judge_spec, self.config.models.judge_temperature, p)
                verdict = check_novelty(
                    child_code, self.archive.island_members(ctx.island_id),
                    ev.similarity_threshold, judge=judge, mode=ev.rejection_mode,
                    candidate_embedding=embedding)
                if not verdict.accepted:
                    novelty_rejections += 1
                    self._emit(generation, "novelty_reject", {
                        "similarity": verdict.max_similarity,
                        "nearest_id": verdict.nearest_id,
                        "rationale": verdict.judge_rationale,
                        "attempt": attempt})
                    if (ev.max_novelty_attempts is not None
                            and novelty_rejections >= ev.max_novelty_attempts):
                        return None
                    extra_feedback = (
                        "Your previous proposal was rejected as too similar to an "
                        "existing program (cosine similarity "
                        f"{verdict.max_similarity:.4f}). Propose something "
                        "meaningfully different.")
                    continue
            return child_code, mutable_code, embedding
        return None

    def _refresh_scratchpad(self, generation: int) -> None:
        mo = self.config.models
        meta_spec = ModelSpec(name=mo.meta_model,
                              temperatures=[mo.meta_temperature],
                              max_tokens=mo.max_tokens)
        since = self.scratchpad.updated_at_generation
        window = [ProgramRecord.from_dict(e.payload["record"])
                  for e in self.journal.events
                  if e.kind == "insert" and e.generation > since]
        top = sorted(self.archive.records(),
                     key=lambda r: (-r.fitness, r.created_at, r.id))[:5]
        self.scratchpad = scratchpad_mod.refresh(
            window, top,
            complete=lambda p: self.gateway.complete(
                meta_spec, mo.meta_temperature, p),
            generation=generation,
            max_recommendations=self.config.evolution.max_meta_recommendations,
            previous=self.scratchpad)
        scratchpad_mod.persist(self.scratchpad, self.run_dir, generation)
        self._emit(generation, "meta_refresh", self.scratchpad.to_dict())

    # -- checkpointing -----------------------------------------------------------

    def _checkpoint(self, generation: int) -> None:
        try:
            self.journal.flush()
        except OSError:
            logger.error("journal flush failed at generation %d", generation)
        ckpt_dir = self.run_dir / "checkpoint"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        self.archive.snapshot(ckpt_dir / "archive.jsonl.tmp")
        (ckpt_dir / "archive.jsonl.tmp").replace(ckpt_dir / "archive.jsonl")
        rng_state = self.rng.getstate()
        state = {
            "schema": CHECKPOINT_SCHEMA,
            "generation_done": generation,
            "journal_seq": self.journal.last_seq,
            "rng_state": [rng_state[0], list(rng_state[1]), rng_state[2]],
            "bandit": self.bandit.snapshot() if self.bandit else None,
            "scratchpad": self.scratchpad.to_dict(),
            "initial_fitness": self.initial_fitness,
            "seed_ids": {str(k): v for k, v in self.seed_ids.items()},
            "pending": [meta.to_dict() for meta in self.pending_meta],
            "replay_path": self.replay_path,
        }
        tmp = ckpt_dir / "state.json.tmp"
        tmp.write_text(json.dumps(state) + "\n")
        tmp.replace(ckpt_dir / "state.json")

    def _restore_from_checkpoint(self) -> None:
        ckpt_dir = self.run_dir / "checkpoint"
        state = json.loads((ckpt_dir / "state.json").read_text())
        if state.get("schema") != CHECKPOINT_SCHEMA:
            raise RunError(f"unexpected checkpoint schema {state.get('schema')!r}")
        self.archive = Archive.load(ckpt_dir / "archive.jsonl")
        self.rng = random.Random()
        raw = state["rng_state"]
        self.rng.setstate((raw[0], tuple(raw[1]), raw[2]))
        self.bandit = (BanditState.from_snapshot(state["bandit"])
                       if state["bandit"] else None)
        self.scratchpad = scratchpad_mod.Scratchpad.from_dict(state["scratchpad"])
        self.initial_fitness = state["initial_fitness"]
        self.seed_ids = {int(k): v for k, v in state["seed_ids"].items()}
        self.replay_path = state.get("replay_path")
        self.start_generation = state["generation_done"] + 1

        cfg = self.config
        self.strategy = SelectionStrategy(
            kind=cfg.database.parent_strategy, alpha=cfg.database.alpha,
            selection_lambda=cfg.database.selection_lambda)
        self.gateway = self._build_gateway()
        self.scheduler = EvaluationScheduler(
            eval_program_path=cfg.evolution.eval_program_path,
            workspace_dir=self.run_dir,
            max_parallel_jobs=cfg.evolution.max_parallel_jobs,
            timeout=cfg.evolution.job_timeout,
            language=cfg.evolution.language)

        truncate_journal(self.run_dir / "journal.jsonl", state["journal_seq"])
        _, events = read_journal(self.run_dir / "journal.jsonl")
        self.journal = Journal(self.run_dir / "journal.jsonl",
                               resume_seq=state["journal_seq"])
        self.journal.events = events

        # Re-submit jobs that were in flight at checkpoint time, in order.
        self.pending_meta = []
        for raw_meta in state["pending"]:
            meta = _PendingMeta(**raw_meta)
            self.scheduler.submit(meta.code, meta.generation, job_id=meta.job_id)
            self.pending_meta.append(meta)

    # -- entry points ----------------------------------------------------------------

    def run(self) -> RunReport:
        if not self._resuming:
            self._setup_fresh()
            self._seed_archive()
            self._checkpoint(0)
        generations = self.config.evolution.generations
        try:
            for generation in range(self.start_generation, generations + 1):
                self._run_generation(generation)
                self._checkpoint(generation)
                if (self.stop_after_generation is not None
                        and generation >= self.stop_after_generation):
                    logger.info("stopping after generation %d as requested",
                                generation)
                    return build_report(self.journal.events, generations)
            while self.pending_meta:
                self._collect_one(generations)
            self._checkpoint(generations)
        finally:
            self.scheduler.shutdown()
            self.journal.close()

        report = build_report(self.journal.events, generations)
        self.archive.snapshot(self.run_dir / "archive.jsonl")
        write_report_files(report, self.run_dir / "report",
                           language=self.config.evolution.language)
        return report

    @classmethod
    def resume(cls, run_dir: Union[str, Path],
               stop_after_generation: Optional[int] = None) -> "EvolutionRunner":
        run_dir = Path(run_dir)
        config = load_config(run_dir / "config.yaml")
        runner = cls(config, init_program_path=run_dir / "unused",
                     run_dir=run_dir, stop_after_generation=stop_after_generation)
        runner._resuming = True
        runner._restore_from_checkpoint()
        return runner


def run_evolution(config: RunConfig, init_program_path: Union[str, Path],
                  run_dir: Optional[Union[str, Path]] = None,
                  replay_path: Optional[Union[str, Path]] = None,
                  preset: Optional[str] = None,
                  stop_after_generation: Optional[int] = None) -> RunReport:
    runner = EvolutionRunner(config, init_program_path, run_dir=run_dir,
                             replay_path=replay_path, preset=preset,
                             stop_after_generation=stop_after_generation)
    return runner.run()


def resume_run(run_dir: Union[str, Path]) -> RunReport:
    return EvolutionRunner.resume(run_dir).run()

"""Evolutionary program search with island archives, LLM mutation operators,
embedding-based novelty rejection, and bandit-driven model selection."""

from .archive import Archive, IslandView, MutationContext, ProgramRecord
from .bandit import BanditState, transform_reward
from .config import RunConfig, ablation_presets, apply_overrides, load_config
from .gateway import LLMGateway, ModelSpec
from .mutation import (EvolveBlocks, PatchProposal, apply_patch, build_prompt,
                       parse_blocks, parse_response, propose_with_retries)
from .novelty import NoveltyVerdict, check_novelty, cosine, embed_mutable
from .report import RunReport, replay
from .runner import EvolutionRunner, resume_run, run_evolution
from .sampling import (SelectionStrategy, power_law_probs, select_parent,
                       weighted_probs)
from .scheduler import EvaluationJob, EvaluationResult, EvaluationScheduler
from .scratchpad import Scratchpad

__version__ = "0.1.0"

__all__ = [
    "Archive", "IslandView", "MutationContext", "ProgramRecord",
    "BanditState", "transform_reward",
    "RunConfig", "ablation_presets", "apply_overrides", "load_config",
    "LLMGateway", "ModelSpec",
    "EvolveBlocks", "PatchProposal", "apply_patch", "build_prompt",
    "parse_blocks", "parse_response", "propose_with_retries",
    "NoveltyVerdict", "check_novelty", "cosine", "embed_mutable",
    "RunReport", "replay",
    "EvolutionRunner", "resume_run", "run_evolution",
    "SelectionStrategy", "power_law_probs", "select_parent", "weighted_probs",
    "EvaluationJob", "EvaluationResult", "EvaluationScheduler",
    "Scratchpad",
]

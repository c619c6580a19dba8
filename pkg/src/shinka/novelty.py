"""Embedding-based novelty rejection with an LLM judge for borderline cases.

A candidate's mutable code is embedded and compared (cosine similarity)
against the cached embeddings of its island's members. Similarity at or
below the threshold accepts outright; above it, a judge model decides
whether the program is meaningfully different. The judge fails open: any
response whose first line is not NO counts as YES.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

from .archive import ProgramRecord
from .mutation import parse_blocks

logger = logging.getLogger(__name__)

JUDGE_PROMPT_TEMPLATE = """You are reviewing whether a newly proposed program is a meaningful change.

The new program's mutable code has cosine similarity {similarity:.6f} to its
nearest neighbor in the current population.

# Nearest existing program (mutable code)
```
{nearest_code}
```

# Newly proposed program (mutable code)
```
{candidate_code}
```

Answer on the first line with exactly YES if the new program is meaningfully
different from the existing one, or exactly NO if it is essentially a
duplicate. You may explain afterwards.
"""


@dataclass
class NoveltyVerdict:
    max_similarity: float  # -1 sentinel when the island is empty
    nearest_id: Optional[str]
    decision: str  # accept_by_embedding | accept_by_judge | reject_by_judge
    judge_rationale: Optional[str] = None

    @property
    def accepted(self) -> bool:
        return self.decision in ("accept_by_embedding", "accept_by_judge")


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise ValueError(f"dimension mismatch: {len(u)} vs {len(v)}")
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    return max(-1.0, min(1.0, dot / (nu * nv)))


def embed_mutable(code: str, embedder: Callable[[str], List[float]]) -> List[float]:
    """Embed only the mutable portion of a program."""
    return embedder(parse_blocks(code).mutable_code)


def check_novelty(candidate_code: str, island_members: Sequence[ProgramRecord],
                  threshold: float, embedder: Optional[Callable[[str], List[float]]] = None,
                  judge: Optional[Callable[[str], str]] = None,
                  mode: str = "embedding_judge",
                  candidate_embedding: Optional[List[float]] = None) -> NoveltyVerdict:
    """Decide whether a candidate is novel enough to evaluate.

    ``mode`` selects the ablation arm: "off" accepts everything,
    "embedding" rejects above-threshold candidates without consulting a
    judge, and "embedding_judge" escalates them to the judge model.
    ``candidate_embedding`` short-circuits re-embedding when the caller has
    already embedded the mutable code.
    """
    if mode == "off":
        return NoveltyVerdict(max_similarity=-1.0, nearest_id=None,
                              decision="accept_by_embedding")
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")

    if candidate_embedding is not None:
        candidate_vec = candidate_embedding
    elif embedder is not None:
        candidate_vec = embed_mutable(candidate_code, embedder)
    else:
        raise ValueError("either an embedder or a candidate_embedding is required")
    max_sim = -1.0
    nearest: Optional[ProgramRecord] = None
    for member in island_members:
        if member.embedding is None:
            continue
        sim = cosine(candidate_vec, member.embedding)
        if sim > max_sim:
            max_sim = sim
            nearest = member
    if nearest is None:
        return NoveltyVerdict(max_similarity=-1.0, nearest_id=None,
                              decision="accept_by_embedding")
    if max_sim <= threshold:
        return NoveltyVerdict(max_similarity=max_sim, nearest_id=nearest.id,
                              decision="accept_by_embedding")

    if mode == "embedding" or judge is None:
        # Embedding-only arm: above-threshold means duplicate, no judge call.
        return NoveltyVerdict(max_similarity=max_sim, nearest_id=nearest.id,
                              decision="reject_by_judge",
                              judge_rationale="embedding-only mode")

    prompt = JUDGE_PROMPT_TEMPLATE.format(
        similarity=max_sim,
        nearest_code=parse_blocks(nearest.code).mutable_code,
        candidate_code=parse_blocks(candidate_code).mutable_code,
    )
    response = judge(prompt)
    first_line = response.strip().split("\n", 1)[0].strip().upper()
    if first_line == "NO":
        return NoveltyVerdict(max_similarity=max_sim, nearest_id=nearest.id,
                              decision="reject_by_judge",
                              judge_rationale=response.strip())
    # Fail open: throughput beats a false rejection.
    return NoveltyVerdict(max_similarity=max_sim, nearest_id=nearest.id,
                          decision="accept_by_judge",
                          judge_rationale=response.strip())

"""Periodic meta-analysis of recent programs injected into mutation prompts.

Every refresh interval the meta model digests the programs evaluated since
the previous refresh plus the current global top performers, and returns
three literal sections (PROGRAM SUMMARIES / GLOBAL INSIGHTS /
RECOMMENDATIONS). Recommendations are capped and the scratchpad is replaced
wholesale; an unparsable response keeps the previous scratchpad.

The meta prompt sees only public metrics and text feedback, never private
metrics. The prompt template here is an engineering artifact of this
implementation, not a published format.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .archive import ProgramRecord

logger = logging.getLogger(__name__)

SECTION_SUMMARIES = "PROGRAM SUMMARIES"
SECTION_INSIGHTS = "GLOBAL INSIGHTS"
SECTION_RECOMMENDATIONS = "RECOMMENDATIONS"

META_PROMPT_HEADER = """You are the analyst for an evolutionary program search. Below are recently
evaluated programs and the current best performers, with their scores,
public metrics, and evaluator feedback.

Identify what distinguishes stronger programs from weaker ones and distill
that into guidance for the next mutations.

Respond with exactly three sections, using these literal headers on their
own lines:

PROGRAM SUMMARIES
- <program id>: one-sentence summary of its approach
GLOBAL INSIGHTS
- observations that hold across programs
RECOMMENDATIONS
1. concrete, actionable advice for the next code mutations
"""


@dataclass
class Scratchpad:
    program_summaries: List[Tuple[str, str]] = field(default_factory=list)
    global_insights: List[str] = field(default_factory=list)
    recommendations: List[str] = field(default_factory=list)
    updated_at_generation: int = 0

    def is_empty(self) -> bool:
        return not (self.program_summaries or self.global_insights
                    or self.recommendations)

    def to_dict(self) -> Dict:
        return {
            "program_summaries": [list(pair) for pair in self.program_summaries],
            "global_insights": list(self.global_insights),
            "recommendations": list(self.recommendations),
            "updated_at_generation": self.updated_at_generation,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Scratchpad":
        return cls(
            program_summaries=[tuple(pair) for pair in data["program_summaries"]],
            global_insights=list(data["global_insights"]),
            recommendations=list(data["recommendations"]),
            updated_at_generation=data["updated_at_generation"],
        )


def build_meta_prompt(window: Sequence[ProgramRecord],
                      top: Sequence[ProgramRecord]) -> str:
    """Render the analysis prompt; only public data enters it."""
    parts = [META_PROMPT_HEADER]

    def describe(record: ProgramRecord) -> str:
        lines = [f"## Program {record.id} (score {record.fitness})"]
        for key in sorted(record.public_metrics):
            lines.append(f"- {key}: {record.public_metrics[key]}")
        if record.text_feedback:
            lines.append(f"Feedback: {record.text_feedback}")
        lines.append("```")
        lines.append(record.mutable_code.rstrip("\n"))
        lines.append("```")
        return "\n".join(lines)

    parts.append("# Recently evaluated programs")
    parts.extend(describe(record) for record in window)
    parts.append("# Current top programs")
    parts.extend(describe(record) for record in top)
    return "\n\n".join(parts) + "\n"


def _split_sections(text: str) -> Optional[Dict[str, List[str]]]:
    sections: Dict[str, List[str]] = {}
    current: Optional[str] = None
    for line in text.split("\n"):
        stripped = line.strip()
        if stripped in (SECTION_SUMMARIES, SECTION_INSIGHTS,
                        SECTION_RECOMMENDATIONS):
            current = stripped
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    if set(sections) != {SECTION_SUMMARIES, SECTION_INSIGHTS,
                         SECTION_RECOMMENDATIONS}:
        return None
    return sections


def _items(lines: Sequence[str]) -> List[str]:
    items = []
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("- "):
            items.append(stripped[2:].strip())
        elif stripped[0].isdigit() and "." in stripped:
            items.append(stripped.split(".", 1)[1].strip())
        elif items:
            items[-1] = items[-1] + " " + stripped  # continuation line
    return items


def parse_meta_response(text: str, max_recommendations: int
                        ) -> Optional[Scratchpad]:
    """Parse the three literal sections; None when the format is unusable."""
    sections = _split_sections(text)
    if sections is None:
        return None
    summaries: List[Tuple[str, str]] = []
    for item in _items(sections[SECTION_SUMMARIES]):
        if ":" in item:
            program_id, summary = item.split(":", 1)
            summaries.append((program_id.strip(), summary.strip()))
        else:
            summaries.append(("", item))
    insights = _items(sections[SECTION_INSIGHTS])
    recommendations = _items(sections[SECTION_RECOMMENDATIONS])
    return Scratchpad(program_summaries=summaries, global_insights=insights,
                      recommendations=recommendations[:max_recommendations])


def refresh(window: Sequence[ProgramRecord], top: Sequence[ProgramRecord],
            complete: Callable[[str], str], generation: int,
            max_recommendations: int, previous: Scratchpad) -> Scratchpad:
    """Run one meta-analysis pass, replacing the scratchpad wholesale."""
    prompt = build_meta_prompt(window, top)
    response = complete(prompt)
    parsed = parse_meta_response(response, max_recommendations)
    if parsed is None:
        logger.warning("meta response unparsable at generation %d; "
                       "keeping previous scratchpad", generation)
        return previous
    parsed.updated_at_generation = generation
    return parsed


def render(pad: Scratchpad) -> str:
    """Deterministic prompt fragment; empty scratchpad renders as ''."""
    if pad.is_empty():
        return ""
    lines = [f"# Evolution scratchpad (generation {pad.updated_at_generation})"]
    if pad.program_summaries:
        lines.append("Program notes:")
        for program_id, summary in pad.program_summaries:
            label = f"{program_id}: " if program_id else ""
            lines.append(f"- {label}{summary}")
    if pad.global_insights:
        lines.append("Insights:")
        for insight in pad.global_insights:
            lines.append(f"- {insight}")
    if pad.recommendations:
        lines.append("Recommendations:")
        for index, rec in enumerate(pad.recommendations, start=1):
            lines.append(f"{index}. {rec}")
    return "\n".join(lines)


def persist(pad: Scratchpad, run_dir: Union[str, Path], generation: int) -> Path:
    path = Path(run_dir) / f"scratchpad_{generation}"
    path.write_text(json.dumps(pad.to_dict(), indent=2) + "\n")
    return path

"""Mutation engine: protected-block parsing, prompt assembly, response
parsing, and safe patch application.

Programs carry marker-delimited regions the mutator may change; everything
outside is immutable. Marker detection is comment-style agnostic: any line
whose trimmed content ends with the marker string counts, so Python ``#``
and C++ ``//`` markers both work.
"""

import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .archive import MutationContext, ProgramRecord
from .gateway import ProviderError

logger = logging.getLogger(__name__)

MARKER_START = "EVOLVE-BLOCK-START"
MARKER_END = "EVOLVE-BLOCK-END"

DIFF_SEARCH_OPEN = "<<<<<<< SEARCH"
DIFF_DIVIDER = "======="
DIFF_REPLACE_CLOSE = ">>>>>>> REPLACE"


class BlockParseError(ValueError):
    """Unbalanced or nested markers; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RetryableParseError(ValueError):
    """Model response had no usable payload; the message is fed back verbatim."""


class PatchRejected(ValueError):
    """A parsed patch could not be applied safely."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason  # search_not_found | immutable_touched | ambiguous_match


@dataclass
class EvolveBlocks:
    """Alternating immutable/mutable segments whose texts concatenate to the
    original source byte-for-byte. Marker lines live in immutable segments."""

    segments: List[Tuple[str, str]]  # (kind, text), kind in {immutable, mutable}
    marker_start: str = MARKER_START
    marker_end: str = MARKER_END

    @property
    def mutable_code(self) -> str:
        return "".join(text for kind, text in self.segments if kind == "mutable")

    def immutable_texts(self) -> List[str]:
        return [text for kind, text in self.segments if kind == "immutable"]

    def reassemble(self) -> str:
        return "".join(text for _, text in self.segments)


@dataclass
class PatchProposal:
    patch_type: str  # diff | full | cross
    payload: Union[List[Tuple[str, str]], str]
    model_name: str = ""
    temperature: float = 0.0
    raw_response: str = ""


@dataclass
class ProposalLimits:
    max_patch_resamples: int = 3  # provider calls per proposal chain
    max_patch_attempts: int = 3  # transport-failure budget


@dataclass
class AcceptedProposal:
    proposal: PatchProposal
    child_code: str
    prompt: str
    provider_calls: int


@dataclass
class ProposalFailure:
    patch_type: str
    attempts: List[Dict[str, str]] = field(default_factory=list)


def _is_marker(line: str, marker: str) -> bool:
    return line.strip().endswith(marker)


def parse_blocks(code: str) -> EvolveBlocks:
    """Split source into immutable/mutable segments.

    Raises BlockParseError on nested or unbalanced markers. A file without
    markers is one immutable segment with empty mutable_code.
    """
    segments: List[Tuple[str, str]] = []
    buffer: List[str] = []
    in_mutable = False
    for lineno, line in enumerate(code.splitlines(keepends=True), start=1):
        if _is_marker(line, MARKER_START):
            if in_mutable:
                raise BlockParseError("nested EVOLVE-BLOCK-START", lineno)
            buffer.append(line)
            segments.append(("immutable", "".join(buffer)))
            buffer = []
            in_mutable = True
        elif _is_marker(line, MARKER_END):
            if not in_mutable:
                raise BlockParseError("EVOLVE-BLOCK-END without matching start", lineno)
            segments.append(("mutable", "".join(buffer)))
            buffer = [line]
            in_mutable = False
        else:
            buffer.append(line)
    if in_mutable:
        raise BlockParseError("unterminated EVOLVE-BLOCK (missing end marker)",
                              len(code.splitlines()) + 1)
    segments.append(("immutable", "".join(buffer)))
    blocks = EvolveBlocks(segments=segments)
    assert blocks.reassemble() == code
    return blocks


# -- prompt assembly --------------------------------------------------------


def _load_template(patch_type: str) -> str:
    name = {"diff": "diff.txt", "full": "full.txt", "cross": "cross.txt"}[patch_type]
    return resources.files("shinka.prompts").joinpath(name).read_text()


def render_metrics(record: ProgramRecord) -> str:
    lines = [f"- combined_score: {record.fitness}"]
    for key in sorted(record.public_metrics):
        lines.append(f"- {key}: {record.public_metrics[key]}")
    return "\n".join(lines)


def _feedback_section(record: ProgramRecord) -> str:
    if not record.text_feedback:
        return ""
    return ("\nHere is textual feedback from the last evaluation:\n"
            f"{record.text_feedback}\n")


def _inspirations_section(ctx: MutationContext, language: str) -> str:
    entries = []
    for label, group in (("Top island program", ctx.top_k_inspirations),
                         ("Archive sample", ctx.random_inspirations)):
        for record in group:
            entries.append(
                f"## {label} (score {record.fitness})\n"
                f"```{language}\n{record.code}\n```")
    if not entries:
        return ""
    return "\n# Inspiration programs\n" + "\n".join(entries) + "\n"


def build_prompt(ctx: MutationContext, patch_type: str,
                 scratchpad_text: str = "", language: str = "python",
                 task_instructions: str = "") -> str:
    """Assemble the mutation prompt for one patch type.

    Sections appear in a fixed order (program, metrics, feedback,
    inspirations, scratchpad, instructions); empty sections render as empty
    strings so the layout stays deterministic.
    """
    template = _load_template(patch_type)
    scratchpad_section = f"\n{scratchpad_text}\n" if scratchpad_text else ""
    fields = {
        "language": language,
        "code_content": ctx.parent.code,
        "performance_metrics": render_metrics(ctx.parent),
        "text_feedback_section": _feedback_section(ctx.parent),
        "inspirations_section": _inspirations_section(ctx, language),
        "scratchpad_section": scratchpad_section,
        "task_instructions": task_instructions,
    }
    if patch_type == "cross":
        if ctx.crossover_partner is None:
            raise ValueError("cross patch type requires a crossover partner")
        fields["partner_code"] = ctx.crossover_partner.code
    return template.format(**fields)


# -- response parsing --------------------------------------------------------


def parse_response(raw: str, patch_type: str) -> PatchProposal:
    """Extract the patch payload from a raw model response."""
    if not raw:
        raise RetryableParseError("empty model response")
    if patch_type == "diff":
        pairs = _parse_diff_pairs(raw)
        if not pairs:
            raise RetryableParseError(
                "no SEARCH/REPLACE block found; emit edits delimited by "
                f"'{DIFF_SEARCH_OPEN}', '{DIFF_DIVIDER}', '{DIFF_REPLACE_CLOSE}' lines")
        return PatchProposal(patch_type="diff", payload=pairs, raw_response=raw)
    if patch_type in ("full", "cross"):
        body = _parse_fenced_code(raw)
        if body is None:
            raise RetryableParseError(
                "no fenced code block found; reply with the complete program "
                "inside a single ``` fence")
        return PatchProposal(patch_type=patch_type, payload=body, raw_response=raw)
    raise ValueError(f"unknown patch type {patch_type!r}")


def _parse_diff_pairs(raw: str) -> List[Tuple[str, str]]:
    pairs: List[Tuple[str, str]] = []
    lines = raw.split("\n")
    i = 0
    while i < len(lines):
        if lines[i].strip() != DIFF_SEARCH_OPEN:
            i += 1
            continue
        search: List[str] = []
        replace: List[str] = []
        i += 1
        while i < len(lines) and lines[i].strip() != DIFF_DIVIDER:
            search.append(lines[i])
            i += 1
        if i >= len(lines):
            break  # unterminated block: ignore the fragment
        i += 1
        while i < len(lines) and lines[i].strip() != DIFF_REPLACE_CLOSE:
            replace.append(lines[i])
            i += 1
        if i >= len(lines):
            break
        i += 1
        search_text = "\n".join(search)
        if search_text:
            pairs.append((search_text, "\n".join(replace)))
    return pairs


def _parse_fenced_code(raw: str) -> Optional[str]:
    bodies: List[str] = []
    lines = raw.split("\n")
    i = 0
    while i < len(lines):
        if lines[i].lstrip().startswith("```"):
            body: List[str] = []
            i += 1
            while i < len(lines) and not lines[i].lstrip().startswith("```"):
                body.append(lines[i])
                i += 1
            if i < len(lines):
                bodies.append("\n".join(body))
        i += 1
    if not bodies:
        return None
    # Prose responses often hold several fences; the full program is the
    # largest one.
    return max(bodies, key=len)


# -- patch application --------------------------------------------------------


def _contains_marker_line(text: str) -> bool:
    return any(_is_marker(line, MARKER_START) or _is_marker(line, MARKER_END)
               for line in text.split("\n"))


def apply_patch(code: str, proposal: PatchProposal) -> str:
    """Apply a proposal, guaranteeing immutable bytes are untouched.

    Diff pairs are applied in order; each search text must match exactly once
    within the mutable segments of the current state. Full and cross rewrites
    are re-split and their immutable segments compared byte-for-byte against
    the input's.
    """
    blocks = parse_blocks(code)
    if proposal.patch_type == "diff":
        segments = list(blocks.segments)
        for search, replace in proposal.payload:
            if not search:
                raise PatchRejected("search_not_found", "empty search text")
            if _contains_marker_line(replace) or _contains_marker_line(search):
                raise PatchRejected(
                    "immutable_touched",
                    "SEARCH/REPLACE text may not contain EVOLVE-BLOCK markers")
            matches = [(idx, seg.count(search))
                       for idx, (kind, seg) in enumerate(segments)
                       if kind == "mutable" and search in seg]
            total = sum(count for _, count in matches)
            if total == 0:
                current = "".join(text for _, text in segments)
                if search in current:
                    raise PatchRejected(
                        "immutable_touched",
                        "search text only occurs in immutable code: "
                        f"{search[:80]!r}")
                raise PatchRejected(
                    "search_not_found",
                    f"search text not found in any mutable block: {search[:80]!r}")
            if total > 1:
                raise PatchRejected(
                    "ambiguous_match",
                    f"search text matches {total} times; it must be unique: "
                    f"{search[:80]!r}")
            idx = matches[0][0]
            kind, seg = segments[idx]
            segments[idx] = (kind, seg.replace(search, replace, 1))
        new_code = "".join(text for _, text in segments)
    elif proposal.patch_type in ("full", "cross"):
        new_code = proposal.payload
        try:
            new_blocks = parse_blocks(new_code)
        except BlockParseError as exc:
            raise PatchRejected(
                "immutable_touched",
                f"rewrite does not preserve the EVOLVE-BLOCK structure: {exc}")
        if new_blocks.immutable_texts() != blocks.immutable_texts():
            raise PatchRejected(
                "immutable_touched",
                "rewrite altered code outside the EVOLVE blocks")
    else:
        raise ValueError(f"unknown patch type {proposal.patch_type!r}")

    parse_blocks(new_code)  # closure: the result must re-parse cleanly
    return new_code


# -- retry loop ---------------------------------------------------------------


def propose_with_retries(ctx: MutationContext, patch_type: str,
                         complete: Callable[[str], str], limits: ProposalLimits,
                         model_name: str = "", temperature: float = 0.0,
                         scratchpad_text: str = "", language: str = "python",
                         task_instructions: str = "",
                         extra_feedback: str = "",
                         on_event: Optional[Callable[[str, Dict], None]] = None
                         ) -> Union[AcceptedProposal, ProposalFailure]:
    """Request, parse, and dry-run-apply proposals until one is valid.

    Parse failures and rejected patches are fed back to the model verbatim
    and consume resamples; transport errors consume the separate attempt
    budget and are re-raised once it is exhausted.
    """
    base_prompt = build_prompt(ctx, patch_type, scratchpad_text=scratchpad_text,
                               language=language, task_instructions=task_instructions)
    if extra_feedback:
        base_prompt = base_prompt + (
            "\n\n# Previous proposal feedback\n" + extra_feedback + "\n")
    attempts: List[Dict[str, str]] = []
    prompt = base_prompt
    calls = 0
    transport_failures = 0
    while calls < limits.max_patch_resamples:
        try:
            raw = complete(prompt)
        except ProviderError as exc:
            transport_failures += 1
            if transport_failures >= limits.max_patch_attempts:
                raise
            logger.warning("provider transport failure %d/%d: %s",
                           transport_failures, limits.max_patch_attempts, exc)
            continue
        calls += 1
        try:
            proposal = parse_response(raw, patch_type)
            child_code = apply_patch(ctx.parent.code, proposal)
        except RetryableParseError as exc:
            attempts.append({"kind": "parse", "error": str(exc)})
            if on_event:
                on_event("parse_retry", {"error": str(exc), "call": calls})
            prompt = base_prompt + (
                "\n\n# Previous attempt failed\nYour previous response could not "
                f"be used: {exc}\nPlease try again.\n")
            continue
        except PatchRejected as exc:
            attempts.append({"kind": exc.reason, "error": str(exc)})
            if on_event:
                on_event("patch_reject", {"reason": exc.reason,
                                          "error": str(exc), "call": calls})
            prompt = base_prompt + (
                "\n\n# Previous attempt failed\nYour previous patch was rejected "
                f"({exc.reason}): {exc}\nPlease try again.\n")
            continue
        proposal.model_name = model_name
        proposal.temperature = temperature
        return AcceptedProposal(proposal=proposal, child_code=child_code,
                                prompt=prompt, provider_calls=calls)
    return ProposalFailure(patch_type=patch_type, attempts=attempts)


def draw_patch_type(patch_types: Sequence[str], probs: Sequence[float], rng) -> str:
    u = rng.random()
    acc = 0.0
    for pt, p in zip(patch_types, probs):
        acc += p
        if u < acc:
            return pt
    return patch_types[-1]

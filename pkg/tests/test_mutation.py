import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shinka.archive import MutationContext
from shinka.gateway import ProviderError, QueueChatProvider
from shinka.mutation import (BlockParseError, PatchProposal, PatchRejected,
                             ProposalFailure, ProposalLimits,
                             RetryableParseError, apply_patch, build_prompt,
                             draw_patch_type, parse_blocks, parse_response,
                             propose_with_retries)
from tests.conftest import EXAMPLE_PROGRAM, make_record

FIXTURES = Path(__file__).parent / "fixtures"

TWO_BLOCK_PROGRAM = """header line
# EVOLVE-BLOCK-START
alpha = 1
# EVOLVE-BLOCK-END
glue line
// EVOLVE-BLOCK-START
beta = 2
// EVOLVE-BLOCK-END
footer line
"""


# -- parse_blocks -----------------------------------------------------------


def test_no_markers_single_immutable_segment():
    blocks = parse_blocks("print('hi')\nprint('bye')\n")
    assert [k for k, _ in blocks.segments] == ["immutable"]
    assert blocks.mutable_code == ""


def test_whole_body_block():
    code = "# EVOLVE-BLOCK-START\nbody = 1\n# EVOLVE-BLOCK-END\n"
    blocks = parse_blocks(code)
    assert blocks.mutable_code == "body = 1\n"
    assert blocks.reassemble() == code


def test_two_blocks_with_glue_five_segments():
    blocks = parse_blocks(TWO_BLOCK_PROGRAM)
    kinds = [k for k, _ in blocks.segments]
    assert kinds == ["immutable", "mutable", "immutable", "mutable", "immutable"]
    assert blocks.reassemble() == TWO_BLOCK_PROGRAM
    assert blocks.mutable_code == "alpha = 1\nbeta = 2\n"


def test_comment_style_agnostic_markers():
    code = "// EVOLVE-BLOCK-START\nint x = 1;\n// EVOLVE-BLOCK-END\n"
    assert parse_blocks(code).mutable_code == "int x = 1;\n"


def test_nested_start_error_names_line():
    code = "# EVOLVE-BLOCK-START\n# EVOLVE-BLOCK-START\n# EVOLVE-BLOCK-END\n"
    with pytest.raises(BlockParseError, match="line 2"):
        parse_blocks(code)


def test_unbalanced_end_error():
    with pytest.raises(BlockParseError, match="line 1"):
        parse_blocks("# EVOLVE-BLOCK-END\n")


def test_unterminated_block_error():
    with pytest.raises(BlockParseError, match="unterminated"):
        parse_blocks("x\n# EVOLVE-BLOCK-START\ny\n")


@st.composite
def marker_balanced_programs(draw):
    rng_lines = st.text(
        alphabet=st.characters(blacklist_characters="\r\n",
                               blacklist_categories=("Cs",)),
        max_size=30).filter(
        lambda s: not s.strip().endswith(("EVOLVE-BLOCK-START",
                                          "EVOLVE-BLOCK-END")))
    parts = []
    for _ in range(draw(st.integers(0, 3))):
        for _ in range(draw(st.integers(0, 3))):
            parts.append(draw(rng_lines))
        parts.append("# EVOLVE-BLOCK-START")
        for _ in range(draw(st.integers(0, 3))):
            parts.append(draw(rng_lines))
        parts.append("# EVOLVE-BLOCK-END")
    for _ in range(draw(st.integers(0, 3))):
        parts.append(draw(rng_lines))
    text = "\n".join(parts)
    if draw(st.booleans()):
        text += "\n"
    return text


@given(marker_balanced_programs())
@settings(max_examples=300, deadline=None)
def test_parse_reassemble_identity(code):
    assert parse_blocks(code).reassemble() == code


# -- build_prompt ------------------------------------------------------------


def _context(feedback=""):
    parent = make_record("parent-1", fitness=1.25, code=EXAMPLE_PROGRAM,
                         mutable="def approach():\n    return math.sqrt(2.0)\n")
    parent.public_metrics = {"runtime": 0.5, "accuracy": 0.75}
    parent.text_feedback = feedback
    top = make_record("insp-1", fitness=2.0, code="# top inspiration\n")
    rand = make_record("insp-2", fitness=0.5, code="# random inspiration\n")
    return MutationContext(parent=parent, top_k_inspirations=[top],
                           random_inspirations=[rand], island_id=0)


def test_prompt_omits_empty_feedback_section():
    prompt = build_prompt(_context(feedback=""), "diff")
    assert "textual feedback" not in prompt
    with_feedback = build_prompt(_context(feedback="too slow"), "diff")
    assert "too slow" in with_feedback


def test_prompt_section_order_and_diff_guidance():
    prompt = build_prompt(_context(feedback="meh"), "diff",
                          scratchpad_text="# Evolution scratchpad\n1. hint")
    order = [prompt.index(EXAMPLE_PROGRAM.split("\n")[0]),
             prompt.index("performance metrics"),
             prompt.index("meh"),
             prompt.index("Inspiration programs"),
             prompt.index("Evolution scratchpad"),
             prompt.index("# Instructions")]
    assert order == sorted(order)
    assert prompt.rstrip().endswith(
        "IMPORTANT: Do not rewrite the entire program - focus on targeted "
        "improvements.")


def test_cross_prompt_includes_both_programs():
    ctx = _context()
    partner = make_record("partner-1", fitness=0.9,
                          code="# partner program body\n")
    ctx.crossover_partner = partner
    prompt = build_prompt(ctx, "cross")
    assert EXAMPLE_PROGRAM.split("\n")[0] in prompt
    assert "# partner program body" in prompt


def test_cross_prompt_requires_partner():
    with pytest.raises(ValueError, match="partner"):
        build_prompt(_context(), "cross")


def test_prompt_golden_fixture():
    prompt = build_prompt(_context(feedback="vector drifts off target"), "diff",
                          scratchpad_text="",
                          task_instructions="Improve the approach function.")
    golden = (FIXTURES / "prompt_diff_golden.txt").read_text()
    assert prompt == golden


# -- parse_response -----------------------------------------------------------


DIFF_RESPONSE = """Here is my edit:
<<<<<<< SEARCH
    return math.sqrt(2.0)
=======
    return math.sqrt(3.0)
>>>>>>> REPLACE
"""


def test_parse_single_diff_pair():
    proposal = parse_response(DIFF_RESPONSE, "diff")
    assert proposal.payload == [("    return math.sqrt(2.0)",
                                 "    return math.sqrt(3.0)")]


def test_parse_prose_only_raises_retryable():
    with pytest.raises(RetryableParseError, match="no SEARCH/REPLACE"):
        parse_response("I think the program is fine as is.", "diff")


def test_parse_empty_response():
    with pytest.raises(RetryableParseError, match="empty"):
        parse_response("", "diff")


def test_parse_three_pairs_in_order():
    raw = "\n".join(
        f"<<<<<<< SEARCH\nneedle{i}\n=======\npatch{i}\n>>>>>>> REPLACE"
        for i in range(3))
    proposal = parse_response(raw, "diff")
    assert proposal.payload == [(f"needle{i}", f"patch{i}") for i in range(3)]


def test_parse_full_takes_largest_fence():
    raw = ("Small sample:\n```\nx = 1\n```\nFull program:\n"
           "```python\nline1\nline2\nline3\n```\n")
    proposal = parse_response(raw, "full")
    assert proposal.payload == "line1\nline2\nline3"


def test_parse_full_without_fence_raises():
    with pytest.raises(RetryableParseError, match="fenced"):
        parse_response("no code here", "full")


# -- apply_patch ----------------------------------------------------------------


def test_diff_replaces_only_mutable_text():
    proposal = parse_response(DIFF_RESPONSE, "diff")
    result = apply_patch(EXAMPLE_PROGRAM, proposal)
    assert "math.sqrt(3.0)" in result
    original = parse_blocks(EXAMPLE_PROGRAM)
    patched = parse_blocks(result)
    assert patched.immutable_texts() == original.immutable_texts()


def test_diff_search_in_immutable_only_rejected():
    proposal = PatchProposal("diff", [("def runner():", "def runner(x):")])
    with pytest.raises(PatchRejected) as err:
        apply_patch(EXAMPLE_PROGRAM, proposal)
    assert err.value.reason == "immutable_touched"


def test_diff_search_not_found():
    proposal = PatchProposal("diff", [("no such text", "whatever")])
    with pytest.raises(PatchRejected) as err:
        apply_patch(EXAMPLE_PROGRAM, proposal)
    assert err.value.reason == "search_not_found"


def test_diff_ambiguous_match_rejected():
    code = ("# EVOLVE-BLOCK-START\nvalue = 1\nvalue = 1\n# EVOLVE-BLOCK-END\n")
    proposal = PatchProposal("diff", [("value = 1", "value = 2")])
    with pytest.raises(PatchRejected) as err:
        apply_patch(code, proposal)
    assert err.value.reason == "ambiguous_match"


def test_diff_cannot_inject_markers():
    proposal = PatchProposal("diff", [
        ("    return math.sqrt(2.0)", "# EVOLVE-BLOCK-END\nhijack")])
    with pytest.raises(PatchRejected) as err:
        apply_patch(EXAMPLE_PROGRAM, proposal)
    assert err.value.reason == "immutable_touched"


def test_diff_spanning_boundary_rejected():
    # The search crosses from mutable into the end marker line.
    span = "    return math.sqrt(2.0)\n# EVOLVE-BLOCK-END"
    proposal = PatchProposal("diff", [(span, "nope")])
    with pytest.raises(PatchRejected) as err:
        apply_patch(EXAMPLE_PROGRAM, proposal)
    assert err.value.reason == "immutable_touched"


def test_full_rewrite_with_identical_skeleton_accepted():
    rewrite = EXAMPLE_PROGRAM.replace("math.sqrt(2.0)", "math.sqrt(5.0)")
    proposal = PatchProposal("full", rewrite)
    result = apply_patch(EXAMPLE_PROGRAM, proposal)
    assert result == rewrite
    assert (parse_blocks(result).immutable_texts()
            == parse_blocks(EXAMPLE_PROGRAM).immutable_texts())


def test_full_rewrite_altering_immutable_rejected():
    rewrite = EXAMPLE_PROGRAM.replace("def runner():", "def runner(x):")
    with pytest.raises(PatchRejected) as err:
        apply_patch(EXAMPLE_PROGRAM, PatchProposal("full", rewrite))
    assert err.value.reason == "immutable_touched"


def test_full_rewrite_breaking_markers_rejected():
    rewrite = EXAMPLE_PROGRAM.replace("# EVOLVE-BLOCK-END\n", "", 1)
    with pytest.raises(PatchRejected) as err:
        apply_patch(EXAMPLE_PROGRAM, PatchProposal("full", rewrite))
    assert err.value.reason == "immutable_touched"


def test_apply_then_parse_never_errors():
    proposal = parse_response(DIFF_RESPONSE, "diff")
    result = apply_patch(EXAMPLE_PROGRAM, proposal)
    parse_blocks(result)  # must not raise


# -- propose_with_retries ----------------------------------------------------------


def _limits(resamples=3, attempts=3):
    return ProposalLimits(max_patch_resamples=resamples,
                          max_patch_attempts=attempts)


def test_valid_on_first_attempt_makes_one_call():
    provider = QueueChatProvider([DIFF_RESPONSE])
    outcome = propose_with_retries(
        _context(), "diff",
        complete=lambda p: provider.complete("m", 0.0, p),
        limits=_limits())
    assert provider.calls == 1
    assert outcome.provider_calls == 1
    assert "math.sqrt(3.0)" in outcome.child_code


def test_invalid_invalid_valid_succeeds_in_three_calls():
    provider = QueueChatProvider(["nothing useful", "still prose",
                                  DIFF_RESPONSE])
    events = []
    outcome = propose_with_retries(
        _context(), "diff",
        complete=lambda p: provider.complete("m", 0.0, p),
        limits=_limits(), on_event=lambda k, p: events.append(k))
    assert provider.calls == 3
    assert not isinstance(outcome, ProposalFailure)
    assert events == ["parse_retry", "parse_retry"]


def test_always_invalid_exhausts_with_attempt_logs():
    provider = QueueChatProvider(["bad"] * 5)
    outcome = propose_with_retries(
        _context(), "diff",
        complete=lambda p: provider.complete("m", 0.0, p),
        limits=_limits(resamples=3))
    assert isinstance(outcome, ProposalFailure)
    assert provider.calls == 3
    assert len(outcome.attempts) == 3


def test_retry_prompt_carries_error_feedback():
    prompts = []

    def complete(prompt):
        prompts.append(prompt)
        return "prose" if len(prompts) == 1 else DIFF_RESPONSE

    propose_with_retries(_context(), "diff", complete=complete, limits=_limits())
    assert "Previous attempt failed" in prompts[1]
    assert "no SEARCH/REPLACE" in prompts[1]


def test_transport_errors_surface_after_attempt_budget():
    calls = []

    def complete(prompt):
        calls.append(1)
        raise ProviderError("connection reset")

    with pytest.raises(ProviderError):
        propose_with_retries(_context(), "diff", complete=complete,
                             limits=_limits(attempts=3))
    assert len(calls) == 3


def test_patch_type_draw_frequencies():
    rng = random.Random(99)
    types = ["diff", "full", "cross"]
    probs = [0.45, 0.45, 0.1]
    draws = 10000
    tally = {t: 0 for t in types}
    for _ in range(draws):
        tally[draw_patch_type(types, probs, rng)] += 1
    for t, p in zip(types, probs):
        assert tally[t] / draws == pytest.approx(p, abs=0.02)

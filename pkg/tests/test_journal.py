import pytest

from shinka.journal import (EVENT_KINDS, Journal, JournalError,
                            SequenceGapError, read_journal, truncate_journal)
from shinka.report import build_report, count_events, replay


def _journal(tmp_path, name="journal.jsonl", header=None):
    return Journal(tmp_path / name, header=header or {"run_id": "t", "seed": 0})


def test_first_event_has_sequence_one(tmp_path):
    journal = _journal(tmp_path)
    event = journal.append(0, "proposal", {"status": "ok"}, ts=1)
    assert event.seq == 1
    journal.close()


def test_thousand_appends_gap_free(tmp_path):
    journal = _journal(tmp_path)
    for index in range(1000):
        journal.append(index, "parse_retry", {"i": index}, ts=index)
    journal.close()
    _, events = read_journal(journal.path)
    assert len(events) == 1000
    assert [e.seq for e in events] == list(range(1, 1001))


def test_unknown_kind_rejected(tmp_path):
    journal = _journal(tmp_path)
    with pytest.raises(JournalError, match="unknown event kind"):
        journal.append(0, "explosion", {}, ts=1)
    journal.close()


def test_header_schema_enforced(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"schema": "not-a-journal/1"}\n')
    with pytest.raises(JournalError, match="schema"):
        read_journal(path)


def test_sequence_gap_names_missing_seq(tmp_path):
    journal = _journal(tmp_path)
    for index in range(5):
        journal.append(0, "insert", {"record": {}}, ts=index)
    journal.close()
    lines = journal.path.read_text().splitlines()
    del lines[3]  # removes seq 3
    journal.path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SequenceGapError, match="missing sequence 3"):
        read_journal(journal.path)


def test_torn_tail_tolerated_only_when_asked(tmp_path):
    journal = _journal(tmp_path)
    for index in range(4):
        journal.append(index, "eval_start", {"job_id": f"j{index}"}, ts=index)
    journal.close()
    text = journal.path.read_text()
    journal.path.write_text(text[:-25])  # tear the final record mid-JSON
    with pytest.raises(JournalError):
        read_journal(journal.path)
    _, events = read_journal(journal.path, tolerate_torn_tail=True)
    assert [e.seq for e in events] == [1, 2, 3]


def test_truncate_journal_drops_suffix(tmp_path):
    journal = _journal(tmp_path)
    for index in range(6):
        journal.append(index, "eval_start", {"job_id": f"j{index}"}, ts=index)
    journal.close()
    truncate_journal(journal.path, last_seq=4)
    header, events = read_journal(journal.path)
    assert header["run_id"] == "t"
    assert [e.seq for e in events] == [1, 2, 3, 4]


def test_empty_journal_replay_is_empty_report(tmp_path):
    journal = _journal(tmp_path, header={"run_id": "t", "generations": 3})
    journal.close()
    report = replay(journal.path)
    assert report.best_program is None
    assert report.evolution_tree == []
    assert report.counters["proposals"] == 0
    assert report.fitness_trajectory == [float("-inf")] * 4


def test_counters_aggregate_event_kinds(tmp_path):
    journal = _journal(tmp_path)
    journal.append(1, "proposal", {"status": "ok"}, ts=1)
    journal.append(1, "proposal", {"status": "failed"}, ts=2)
    journal.append(1, "parse_retry", {}, ts=3)
    journal.append(1, "novelty_reject", {}, ts=4)
    journal.append(1, "patch_reject", {}, ts=5)
    journal.append(1, "eval_fail", {}, ts=6)
    journal.close()
    counters = count_events(journal.events)
    assert counters["proposals"] == 2
    assert counters["proposal_failures"] == 1
    assert counters["parse_retries"] == 1
    assert counters["novelty_rejects"] == 1
    assert counters["patch_rejects"] == 1
    assert counters["eval_failures"] == 1


def _record_payload(record_id, generation, fitness, parent=None):
    return {"record": {
        "id": record_id, "parent_id": parent, "crossover_partner_id": None,
        "island_id": 0, "generation": generation, "code": f"# {record_id}",
        "mutable_code": "", "fitness": fitness, "public_metrics": {},
        "text_feedback": "", "offspring_count": 0, "embedding": None,
        "model_name": "m", "patch_type": "init" if parent is None else "diff",
        "created_at": generation}}


def test_replay_matches_in_memory_report(tmp_path):
    journal = _journal(tmp_path, header={"run_id": "t", "generations": 2})
    journal.append(0, "insert", _record_payload("seed", 0, 1.0), ts=1)
    journal.append(1, "proposal", {"status": "ok"}, ts=2)
    journal.append(1, "insert", _record_payload("kid", 1, 2.0, parent="seed"),
                   ts=3)
    journal.close()
    live = build_report(journal.events, generations=2)
    reread = replay(journal.path)
    assert live == reread
    assert live.best_program.id == "kid"
    assert live.fitness_trajectory == [1.0, 2.0, 2.0]
    assert live.evolution_tree == [("seed", "kid", "parent")]


def test_every_insert_has_prior_eval_done(tmp_path):
    # Structural invariant checked over a real journal in runner tests; here
    # the aggregation helper is exercised directly.
    journal = _journal(tmp_path)
    journal.append(0, "eval_done", {"job_id": "j0", "child_id": "seed"}, ts=1)
    journal.append(0, "insert", _record_payload("seed", 0, 1.0), ts=2)
    journal.close()
    _, events = read_journal(journal.path)
    done_seqs = {e.payload.get("child_id", e.payload.get("job_id")): e.seq
                 for e in events if e.kind == "eval_done"}
    for event in events:
        if event.kind == "insert":
            rid = event.payload["record"]["id"]
            assert done_seqs.get(rid, 10**9) < event.seq


def test_event_kind_enum_is_closed():
    assert set(EVENT_KINDS) == {
        "proposal", "parse_retry", "novelty_reject", "patch_reject",
        "eval_start", "eval_done", "eval_fail", "insert", "bandit_update",
        "migration", "meta_refresh"}

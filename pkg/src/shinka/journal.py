"""Append-only event journal: the single source of truth for a run.

Every proposal, rejection, evaluation, bandit update, migration, and
scratchpad refresh is one JSON line with a strictly increasing, gap-free
sequence number. Timestamps are logical ticks from the coordinator clock,
never wall-clock, so identical runs produce byte-identical journals.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

logger = logging.getLogger(__name__)

JOURNAL_SCHEMA = "shinka-journal/1"

EVENT_KINDS = (
    "proposal",
    "parse_retry",
    "novelty_reject",
    "patch_reject",
    "eval_start",
    "eval_done",
    "eval_fail",
    "insert",
    "bandit_update",
    "migration",
    "meta_refresh",
)


class JournalError(Exception):
    pass


class SequenceGapError(JournalError):
    """A sequence number is missing; names the first gap."""


@dataclass
class EventRecord:
    seq: int
    generation: int
    kind: str
    payload: Dict
    ts: int

    def to_line(self) -> str:
        return json.dumps({"seq": self.seq, "generation": self.generation,
                           "kind": self.kind, "ts": self.ts,
                           "payload": self.payload})

    @classmethod
    def from_dict(cls, data: Dict) -> "EventRecord":
        return cls(seq=data["seq"], generation=data["generation"],
                   kind=data["kind"], payload=data["payload"], ts=data["ts"])


class Journal:
    """Coordinator-owned writer; readers consume flushed prefixes."""

    def __init__(self, path: Union[str, Path], header: Optional[Dict] = None,
                 resume_seq: int = 0):
        self.path = Path(path)
        self._seq = resume_seq
        self.events: List[EventRecord] = []  # in-memory copy for live reports
        if resume_seq == 0:
            meta = {"schema": JOURNAL_SCHEMA}
            meta.update(header or {})
            self.path.write_text(json.dumps(meta) + "\n")
            self._fh = open(self.path, "a")
        else:
            self._fh = open(self.path, "a")

    def append(self, generation: int, kind: str, payload: Dict, ts: int) -> EventRecord:
        if kind not in EVENT_KINDS:
            raise JournalError(f"unknown event kind {kind!r}")
        self._seq += 1
        event = EventRecord(seq=self._seq, generation=generation, kind=kind,
                            payload=payload, ts=ts)
        self._fh.write(event.to_line() + "\n")
        self.events.append(event)
        return event

    @property
    def last_seq(self) -> int:
        return self._seq

    def flush(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        try:
            self.flush()
        finally:
            self._fh.close()


def read_journal(path: Union[str, Path], tolerate_torn_tail: bool = False
                 ) -> Tuple[Dict, List[EventRecord]]:
    """Read and validate a journal: header plus gap-free event records.

    With ``tolerate_torn_tail`` a trailing partial line (crash between
    flushes) is dropped instead of raising; sequence gaps always raise.
    """
    text = Path(path).read_text()
    lines = text.split("\n")
    if text.endswith("\n"):
        lines = lines[:-1]
    if not lines:
        raise JournalError(f"{path}: empty journal")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise JournalError(f"{path}: bad header: {exc}") from exc
    if header.get("schema") != JOURNAL_SCHEMA:
        raise JournalError(f"{path}: expected schema {JOURNAL_SCHEMA!r}, "
                           f"got {header.get('schema')!r}")
    events: List[EventRecord] = []
    expected = 1
    for index, line in enumerate(lines[1:], start=1):
        if not line:
            continue
        try:
            event = EventRecord.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError) as exc:
            if tolerate_torn_tail and index == len(lines) - 1:
                logger.warning("%s: dropping torn tail line %d", path, index)
                break
            raise JournalError(f"{path}: corrupt record at line {index + 1}: "
                               f"{exc}") from exc
        if event.seq != expected:
            raise SequenceGapError(
                f"{path}: missing sequence {expected} (found {event.seq} "
                f"at line {index + 1})")
        expected += 1
        events.append(event)
    return header, events


def truncate_journal(path: Union[str, Path], last_seq: int) -> None:
    """Drop events beyond ``last_seq`` (resume after a mid-generation crash)."""
    header, events = read_journal(path, tolerate_torn_tail=True)
    kept = [event for event in events if event.seq <= last_seq]
    lines = [json.dumps(header)] + [event.to_line() for event in kept]
    Path(path).write_text("\n".join(lines) + "\n")

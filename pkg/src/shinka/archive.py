"""Island-structured archive of evaluated programs.

The archive stores every successfully evaluated program in one of several
island subpopulations, enforces per-island elite retention on insert,
performs ring-topology migration, and supplies the hierarchical
parent-plus-inspirations context used to build mutation prompts.

Timestamps are logical ticks handed out by the run coordinator so that an
entire run is a pure function of (seed, config, provider transcripts).
"""

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .config import RunConfig
from .sampling import SelectionStrategy, select_parent

logger = logging.getLogger(__name__)

ARCHIVE_SCHEMA = "shinka-archive/1"

RECORD_FIELDS = (
    "id",
    "parent_id",
    "crossover_partner_id",
    "island_id",
    "generation",
    "code",
    "mutable_code",
    "fitness",
    "public_metrics",
    "text_feedback",
    "offspring_count",
    "embedding",
    "model_name",
    "patch_type",
    "created_at",
)


class ArchiveError(Exception):
    """Raised on contract violations: duplicate ids, invalid fitness, etc."""


class EmptyArchiveError(ArchiveError):
    """Raised when sampling from an archive with no programs."""


class SnapshotError(ArchiveError):
    """Raised when a snapshot file cannot be parsed."""


@dataclass
class ProgramRecord:
    """One evaluated program with its lineage and feedback."""

    id: str
    parent_id: Optional[str]
    crossover_partner_id: Optional[str]
    island_id: int
    generation: int
    code: str
    mutable_code: str
    fitness: float
    public_metrics: Dict[str, float] = field(default_factory=dict)
    text_feedback: str = ""
    offspring_count: int = 0
    embedding: Optional[List[float]] = None
    model_name: str = ""
    patch_type: str = "init"  # diff | full | cross | init
    created_at: int = 0  # logical tick, not wall clock

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ProgramRecord":
        unknown = set(data) - set(RECORD_FIELDS)
        if unknown:
            raise SnapshotError(f"unknown record fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class IslandView:
    """Read-only view of one island: member ids in canonical order."""

    island_id: int
    members: List[str]
    best_id: Optional[str]


@dataclass
class MutationContext:
    """Parent plus inspiration programs handed to the mutation engine."""

    parent: ProgramRecord
    top_k_inspirations: List[ProgramRecord]
    random_inspirations: List[ProgramRecord]
    island_id: int
    crossover_partner: Optional[ProgramRecord] = None


def _order_key(record: ProgramRecord) -> Tuple[float, int, str]:
    # Canonical total order: fitness desc, then earlier created_at, then id.
    return (-record.fitness, record.created_at, record.id)


class Archive:
    """Single-writer island archive.

    One coordinator mutates the archive; readers get copies. Island capacity
    is ``archive_size // num_islands`` so the configured archive size bounds
    the total population.
    """

    def __init__(self, num_islands: int, archive_size: int, elite_ratio: float,
                 island_elitism: bool = True):
        if num_islands < 1:
            raise ArchiveError("num_islands must be >= 1")
        if archive_size < num_islands:
            raise ArchiveError("archive_size must be >= num_islands")
        self.num_islands = num_islands
        self.archive_size = archive_size
        self.elite_ratio = elite_ratio
        self.island_elitism = island_elitism
        self.island_capacity = max(1, archive_size // num_islands)
        self._records: Dict[str, ProgramRecord] = {}
        self._islands: List[List[str]] = [[] for _ in range(num_islands)]
        self.clock = 0  # logical time; advanced by the coordinator

    # -- basic accessors ---------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._records

    def get(self, record_id: str) -> ProgramRecord:
        try:
            return self._records[record_id]
        except KeyError:
            raise ArchiveError(f"unknown program id {record_id!r}") from None

    def records(self) -> List[ProgramRecord]:
        return [self._records[rid] for island in self._islands for rid in island]

    def island_view(self, island_id: int) -> IslandView:
        self._check_island(island_id)
        ids = sorted(self._islands[island_id],
                     key=lambda rid: _order_key(self._records[rid]))
        return IslandView(island_id=island_id, members=ids,
                          best_id=ids[0] if ids else None)

    def island_members(self, island_id: int) -> List[ProgramRecord]:
        return [self._records[rid] for rid in self.island_view(island_id).members]

    def best_record(self) -> Optional[ProgramRecord]:
        if not self._records:
            return None
        return min(self._records.values(), key=_order_key)

    def tick(self) -> int:
        self.clock += 1
        return self.clock

    def _check_island(self, island_id: int) -> None:
        if not 0 <= island_id < self.num_islands:
            raise ArchiveError(
                f"island_id {island_id} outside [0, {self.num_islands})")

    # -- mutation ----------------------------------------------------------

    def insert(self, record: ProgramRecord) -> Optional[str]:
        """Insert a record, evicting per the elite policy if the island is full.

        Returns the id of the evicted record, if any (the newcomer itself may
        be evicted when it ranks below every protected member of a full
        island). The parent's and crossover partner's offspring counters are
        incremented; eviction decrements the evictee's parents so that
        counters always equal a from-scratch recount over archived lineage
        edges.
        """
        if record.id in self._records:
            raise ArchiveError(f"duplicate program id {record.id!r}")
        if not math.isfinite(record.fitness):
            raise ArchiveError(
                f"fitness must be finite, got {record.fitness!r} "
                "(failed evaluations are journaled, never archived)")
        self._check_island(record.island_id)

        self._records[record.id] = record
        self._islands[record.island_id].append(record.id)
        self._bump_offspring(record, +1)

        evicted = None
        if len(self._islands[record.island_id]) > self.island_capacity:
            evicted = self._evict(record.island_id)
        return evicted

    def _bump_offspring(self, record: ProgramRecord, delta: int) -> None:
        for pid in (record.parent_id, record.crossover_partner_id):
            if pid is not None and pid in self._records:
                self._records[pid].offspring_count += delta

    def _evict(self, island_id: int) -> str:
        ordered = self.island_view(island_id).members
        num_elites = math.ceil(self.elite_ratio * self.island_capacity)
        unprotected = ordered[num_elites:] if num_elites < len(ordered) else ordered[-1:]
        victim_id = unprotected[-1]
        victim = self._records.pop(victim_id)
        self._islands[island_id].remove(victim_id)
        self._bump_offspring(victim, -1)
        logger.debug("evicted %s (fitness %.6g) from island %d",
                     victim_id, victim.fitness, island_id)
        return victim_id

    def migrate(self, generation: int, config: RunConfig, rng) -> List[Tuple[str, int, int]]:
        """Move members between islands on the configured interval.

        Each island emits ``floor(rate * island_size)`` members chosen
        uniformly among non-best members (island elitism protects the best),
        destined for the next island in a ring. Returns (id, from, to) moves.
        """
        if generation <= 0:
            return []
        db = config.database
        if generation % db.migration_interval != 0 or db.migration_rate <= 0.0:
            return []
        if self.num_islands < 2:
            return []

        moves: List[Tuple[str, int, int]] = []
        sizes = [len(island) for island in self._islands]
        for island_id in range(self.num_islands):
            count = math.floor(db.migration_rate * sizes[island_id])
            if count <= 0:
                continue
            ordered = self.island_view(island_id).members
            eligible = ordered[1:] if self.island_elitism else list(ordered)
            if not eligible:
                continue
            count = min(count, len(eligible))
            movers = rng.sample(eligible, count)
            dest = (island_id + 1) % self.num_islands
            for rid in movers:
                moves.append((rid, island_id, dest))

        for rid, src, dest in moves:
            self._islands[src].remove(rid)
            self._islands[dest].append(rid)
            self._records[rid].island_id = dest

        # Migration may overfill a destination; re-apply the insert policy.
        for island_id in range(self.num_islands):
            while len(self._islands[island_id]) > self.island_capacity:
                self._evict(island_id)
        return moves

    # -- sampling ----------------------------------------------------------

    def sample_context(self, config: RunConfig, rng,
                       strategy: Optional[SelectionStrategy] = None,
                       seed_ids: Optional[Dict[int, str]] = None) -> MutationContext:
        """Draw island uniformly, then parent and inspirations within it.

        Top-K inspirations are the island's best non-parent members; random
        inspirations are drawn archive-wide without replacement, deduplicated
        by id against the parent and the top-K picks.
        """
        if not self._records:
            raise EmptyArchiveError(
                "archive is empty; seed it with the initial program first")
        non_empty = [i for i in range(self.num_islands) if self._islands[i]]
        island_id = rng.choice(non_empty)

        db = config.database
        if strategy is None:
            strategy = SelectionStrategy(
                kind=db.parent_strategy, alpha=db.alpha,
                selection_lambda=db.selection_lambda)
        view = self.island_view(island_id)
        seed_id = (seed_ids or {}).get(island_id)
        parent_id = select_parent(view, self._records, strategy, rng, seed_id=seed_id)
        parent = self._records[parent_id]

        top_k = [self._records[rid] for rid in view.members
                 if rid != parent_id][: db.num_top_k_inspirations]

        taken = {parent_id} | {r.id for r in top_k}
        pool = [rid for island in self._islands for rid in island if rid not in taken]
        pool.sort(key=lambda rid: _order_key(self._records[rid]))
        count = min(db.num_archive_inspirations, len(pool))
        random_ids = rng.sample(pool, count) if count else []
        random_insp = [self._records[rid] for rid in random_ids]

        return MutationContext(parent=parent, top_k_inspirations=top_k,
                               random_inspirations=random_insp, island_id=island_id)

    def sample_crossover_partner(self, island_id: int, parent_id: str,
                                 strategy: SelectionStrategy, rng) -> Optional[str]:
        """Partner drawn from the parent's island by the active strategy."""
        view = self.island_view(island_id)
        remaining = [rid for rid in view.members if rid != parent_id]
        if not remaining:
            return None
        sub_view = IslandView(island_id=island_id, members=remaining,
                              best_id=remaining[0])
        return select_parent(sub_view, self._records, strategy, rng)

    # -- consistency checks (used by tests and recovery) --------------------

    def recount_offspring(self) -> Dict[str, int]:
        counts = {rid: 0 for rid in self._records}
        for record in self._records.values():
            for pid in (record.parent_id, record.crossover_partner_id):
                if pid is not None and pid in counts:
                    counts[pid] += 1
        return counts

    def check_invariants(self) -> None:
        total = sum(len(island) for island in self._islands)
        if total != len(self._records):
            raise ArchiveError("island membership count != record count")
        seen = set()
        for island_id, island in enumerate(self._islands):
            for rid in island:
                if rid in seen:
                    raise ArchiveError(f"id {rid!r} appears in multiple islands")
                seen.add(rid)
                if self._records[rid].island_id != island_id:
                    raise ArchiveError(f"record {rid!r} island_id out of sync")
        recounted = self.recount_offspring()
        for rid, record in self._records.items():
            if record.offspring_count != recounted[rid]:
                raise ArchiveError(
                    f"offspring_count drift for {rid!r}: "
                    f"stored {record.offspring_count}, actual {recounted[rid]}")

    # -- persistence ---------------------------------------------------------

    def snapshot(self, path: Union[str, Path]) -> None:
        """Write the archive as a header line plus one JSON record per line."""
        lines = [json.dumps({
            "schema": ARCHIVE_SCHEMA,
            "num_islands": self.num_islands,
            "archive_size": self.archive_size,
            "elite_ratio": self.elite_ratio,
            "island_elitism": self.island_elitism,
            "clock": self.clock,
        })]
        for record in self.records():
            lines.append(json.dumps(record.to_dict()))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Archive":
        text = Path(path).read_text()
        lines = text.splitlines()
        if not lines:
            raise SnapshotError(f"{path}: empty snapshot file")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise SnapshotError(f"{path}: bad header line: {exc}") from exc
        if header.get("schema") != ARCHIVE_SCHEMA:
            raise SnapshotError(
                f"{path}: expected schema {ARCHIVE_SCHEMA!r}, "
                f"got {header.get('schema')!r}")
        archive = cls(
            num_islands=header["num_islands"],
            archive_size=header["archive_size"],
            elite_ratio=header["elite_ratio"],
            island_elitism=header.get("island_elitism", True),
        )
        archive.clock = header.get("clock", 0)
        last_good = "header"
        for index, line in enumerate(lines[1:], start=1):
            if not line.strip():
                continue
            try:
                record = ProgramRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, TypeError, SnapshotError) as exc:
                raise SnapshotError(
                    f"{path}: record {index} is corrupt (last valid: "
                    f"{last_good}): {exc}") from exc
            archive._records[record.id] = record
            archive._islands[record.island_id].append(record.id)
            last_good = record.id
        return archive

    def __eq__(self, other) -> bool:
        if not isinstance(other, Archive):
            return NotImplemented
        return (self.num_islands == other.num_islands
                and self.archive_size == other.archive_size
                and self.elite_ratio == other.elite_ratio
                and self.island_elitism == other.island_elitism
                and self.clock == other.clock
                and self._islands == other._islands
                and self._records == other._records)

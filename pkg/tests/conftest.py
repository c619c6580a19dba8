import random

import pytest

from shinka.archive import Archive, ProgramRecord


def make_record(record_id, island=0, fitness=0.0, parent=None, partner=None,
                generation=0, created_at=0, code=None, mutable=None,
                offspring=0, embedding=None, patch_type="init"):
    code = code if code is not None else f"# program {record_id}\n"
    return ProgramRecord(
        id=record_id, parent_id=parent, crossover_partner_id=partner,
        island_id=island, generation=generation, code=code,
        mutable_code=mutable if mutable is not None else code,
        fitness=fitness, public_metrics={}, text_feedback="",
        offspring_count=offspring, embedding=embedding, model_name="",
        patch_type=patch_type, created_at=created_at)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def small_archive():
    """One island holding three programs with distinct fitness."""
    archive = Archive(num_islands=1, archive_size=10, elite_ratio=0.3)
    for index, fitness in enumerate([3.0, 2.0, 1.0]):
        archive.insert(make_record(f"p{index}", fitness=fitness,
                                   created_at=archive.tick()))
    return archive


EXAMPLE_PROGRAM = """import math

# EVOLVE-BLOCK-START
def approach():
    return math.sqrt(2.0)
# EVOLVE-BLOCK-END

def runner():
    return approach()
"""

"""Shared fixtures and the seeded random-schedule generator used as a
fuzzing oracle across the suite."""

from __future__ import annotations

import random

import pytest

from goalnet.model import GoalSchedule, ScheduleBuilder


def random_schedule(rng: random.Random, max_ranks: int = 5,
                    max_tasks: int = 12, with_jobs: bool = False) -> GoalSchedule:
    """Generate a valid schedule: DAG edges only forward in id order, all
    sends paired with matching recvs (so validate() is clean)."""
    num_ranks = rng.randint(1, max_ranks)
    b = ScheduleBuilder(num_ranks)

    # Matched message set: pick (src, dst, tag) triples, emit both sides.
    if num_ranks >= 2:
        for _ in range(rng.randint(0, max_tasks // 2)):
            src = rng.randrange(num_ranks)
            dst = rng.choice([r for r in range(num_ranks) if r != src])
            tag = rng.randint(0, 3)
            nbytes = rng.randint(0, 1 << 20)
            b.send(src, dst, nbytes, tag=tag, cpu=rng.randint(0, 2), nic=rng.randint(0, 1))
            b.recv(dst, src, nbytes, tag=tag, cpu=rng.randint(0, 2), nic=rng.randint(0, 1))

    for r in range(num_ranks):
        for _ in range(rng.randint(0, max_tasks // 2)):
            b.calc(r, rng.randint(0, 10_000), cpu=rng.randint(0, 2))

    # Forward-only edges keep the graph acyclic by construction.
    for r in range(num_ranks):
        n = b._next_id(r)
        for _ in range(rng.randint(0, n)):
            if n < 2:
                break
            i, j = sorted(rng.sample(range(n), 2))
            b.require(r, i, j)
        if with_jobs:
            b.set_job_id(r, rng.randint(0, 2))
    return b.build()


@pytest.fixture
def rng():
    return random.Random(0xA17A45)

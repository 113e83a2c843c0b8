"""Binary GOAL codec: inverse property, error handling, compactness."""

import random

import pytest

from goalnet.goal_binary import GoalDecodeError, decode_binary, encode_binary
from goalnet.goal_text import emit_text
from goalnet.model import ScheduleBuilder
from conftest import random_schedule


def test_empty_single_rank():
    b = ScheduleBuilder(1)
    s = b.build()
    data = encode_binary(s)
    # header (12) + one rank table (8 + 0 tasks + 4 edge count)
    assert len(data) == 12 + 8 + 4
    assert decode_binary(data) == s


def test_fig_like_schedule_exact_inverse():
    b = ScheduleBuilder(2)
    c = b.calc(0, 10, label="l1")
    snd = b.send(0, 1, 8, label="l2")
    b.recv(0, 1, 8, cpu=1, label="l3")
    b.require(0, c, snd)
    b.recv(1, 0, 8)
    b.send(1, 0, 8)
    s = b.build()
    assert decode_binary(encode_binary(s)) == s


def test_roundtrip_fuzz(rng):
    for _ in range(100):
        s = random_schedule(rng)
        assert decode_binary(encode_binary(s)) == s


def test_bad_magic():
    b = ScheduleBuilder(1)
    data = bytearray(encode_binary(b.build()))
    data[0:4] = b"NOPE"
    with pytest.raises(GoalDecodeError, match="magic"):
        decode_binary(bytes(data))


def test_unsupported_version():
    b = ScheduleBuilder(1)
    data = bytearray(encode_binary(b.build()))
    data[4] = 99
    with pytest.raises(GoalDecodeError, match="version"):
        decode_binary(bytes(data))


def test_dangling_dep_index():
    b = ScheduleBuilder(1)
    b.calc(0, 1)
    b.calc(0, 1)
    b.require(0, 0, 1)
    data = bytearray(encode_binary(b.build()))
    data[-8:-4] = (7).to_bytes(4, "little")  # edge.before -> nonexistent task
    with pytest.raises(GoalDecodeError, match="dangling"):
        decode_binary(bytes(data))


def test_truncation_at_every_offset():
    b = ScheduleBuilder(2)
    b.send(0, 1, 64, tag=2)
    b.recv(1, 0, 64, tag=2)
    b.calc(0, 5)
    b.require(0, 0, 1)
    data = encode_binary(b.build())
    for cut in range(len(data)):
        with pytest.raises(GoalDecodeError):
            decode_binary(data[:cut])


def test_trailing_garbage_rejected():
    b = ScheduleBuilder(1)
    data = encode_binary(b.build()) + b"\x00"
    with pytest.raises(GoalDecodeError, match="trailing"):
        decode_binary(data)


def test_binary_beats_text_on_large_ring():
    # 10^5-task ring exchange in the shape schedgen emits: semantic labels,
    # per-round chaining deps.
    n_ranks, rounds = 4, 12_500
    b = ScheduleBuilder(n_ranks)
    for rank in range(n_ranks):
        prev = None
        for r in range(rounds):
            snd = b.send(rank, (rank + 1) % n_ranks, 131072, tag=r,
                         label=f"rx{r}_send")
            rcv = b.recv(rank, (rank - 1) % n_ranks, 131072, tag=r,
                         label=f"rx{r}_recv")
            if prev is not None:
                for a in prev:
                    b.require(rank, a, snd)
                    b.require(rank, a, rcv)
            prev = (snd, rcv)
    s = b.build()
    assert s.task_count() == 100_000
    s_text = len(emit_text(s).encode())
    s_bin = len(encode_binary(s))
    assert s_bin < 0.4 * s_text

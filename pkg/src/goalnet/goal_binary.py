"""Compact binary GOAL encoding.

Versioned little-endian layout::

    magic 'GOAL' | version u32 | num_ranks u32
    per rank: rank id u32 | task count u32
              per task: kind u8 | cpu u16 | nic u16 | peer u32 | tag u32 | bytes_or_duration u64
              edge count u32 | per edge: before u32, after u32

Labels are presentation metadata and are not stored; decoding yields
unlabeled tasks that compare equal to the originals.
"""

from __future__ import annotations

import struct

from .model import GoalSchedule, RankSchedule, Task, TaskKind

MAGIC = b"GOAL"
VERSION = 1

_HEADER = struct.Struct("<4sII")
_RANK_HEADER = struct.Struct("<II")
_TASK = struct.Struct("<BHHIIQ")
_U32 = struct.Struct("<I")
_EDGE = struct.Struct("<II")

_MAX_U16 = 0xFFFF
_MAX_U32 = 0xFFFFFFFF


class GoalDecodeError(ValueError):
    pass


def encode_binary(s: GoalSchedule) -> bytes:
    out = bytearray(_HEADER.pack(MAGIC, VERSION, s.num_ranks))
    for r in s.ranks:
        if len(r.tasks) > _MAX_U32:
            raise ValueError(f"rank {r.rank}: task count exceeds format limit")
        out += _RANK_HEADER.pack(r.rank, len(r.tasks))
        for t in r.tasks:
            if t.cpu > _MAX_U16 or t.nic > _MAX_U16:
                raise ValueError(f"rank {r.rank} task {t.id}: cpu/nic exceeds u16")
            if t.kind == TaskKind.CALC:
                payload = t.duration_ns
                peer = 0
                tag = 0
            else:
                payload = t.bytes
                peer = t.peer
                tag = t.tag
            out += _TASK.pack(t.kind, t.cpu, t.nic, peer, tag, payload)
        out += _U32.pack(len(r.deps))
        for before, after in sorted(r.deps):
            out += _EDGE.pack(before, after)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: struct.Struct, what: str):
        end = self.pos + fmt.size
        if end > len(self.data):
            raise GoalDecodeError(f"truncated stream while reading {what}")
        vals = fmt.unpack_from(self.data, self.pos)
        self.pos = end
        return vals

    def done(self) -> bool:
        return self.pos == len(self.data)


def decode_binary(b: bytes) -> GoalSchedule:
    rd = _Reader(b)
    magic, version, num_ranks = rd.take(_HEADER, "header")
    if magic != MAGIC:
        raise GoalDecodeError(f"bad magic {magic!r}")
    if version != VERSION:
        raise GoalDecodeError(f"unsupported format version {version}")
    if num_ranks < 1:
        raise GoalDecodeError("num_ranks must be >= 1")

    ranks = []
    for i in range(num_ranks):
        rank_id, ntasks = rd.take(_RANK_HEADER, f"rank {i} table")
        if rank_id != i:
            raise GoalDecodeError(f"rank table {i} carries rank id {rank_id}")
        tasks = []
        for tid in range(ntasks):
            kind_raw, cpu, nic, peer, tag, payload = rd.take(_TASK, f"rank {i} task {tid}")
            try:
                kind = TaskKind(kind_raw)
            except ValueError:
                raise GoalDecodeError(f"rank {i} task {tid}: unknown kind {kind_raw}") from None
            if kind == TaskKind.CALC:
                tasks.append(Task(tid, kind, duration_ns=payload, cpu=cpu, nic=nic))
            else:
                tasks.append(Task(tid, kind, bytes=payload, peer=peer, tag=tag,
                                  cpu=cpu, nic=nic))
        (nedges,) = rd.take(_U32, f"rank {i} edge count")
        deps = set()
        for e in range(nedges):
            before, after = rd.take(_EDGE, f"rank {i} edge {e}")
            if before >= ntasks or after >= ntasks:
                raise GoalDecodeError(f"rank {i}: dangling dep index ({before},{after})")
            deps.add((before, after))
        ranks.append(RankSchedule(rank=i, tasks=tuple(tasks), deps=frozenset(deps)))

    if not rd.done():
        raise GoalDecodeError(f"{len(b) - rd.pos} trailing bytes after last rank table")
    return GoalSchedule(num_ranks=num_ranks, ranks=tuple(ranks))

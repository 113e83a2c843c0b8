"""Core GOAL schedule model.

A GOAL schedule is a set of per-rank DAGs whose vertices are send, recv,
and calc tasks.  Tasks on different compute streams ("cpu" labels) of one
rank execute concurrently; dependency edges are full happens-before
constraints.  All types are immutable after construction, so schedules can
be shared freely between threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence


class TaskKind(enum.IntEnum):
    SEND = 0
    RECV = 1
    CALC = 2


# Reserved label prefix for zero-cost fan-out/join vertices inserted by
# merge operations.  Dummies are ordinary calc tasks with duration 0.
DUMMY_PREFIX = "__dummy"


@dataclass(frozen=True)
class Task:
    """One vertex of a rank's DAG.

    ``label`` is presentation metadata (used by the textual format and
    error messages); it is excluded from equality so that the compact
    binary encoding, which does not store labels, round-trips exactly.
    """

    id: int
    kind: TaskKind
    bytes: Optional[int] = None       # Send/Recv payload
    peer: Optional[int] = None        # Send/Recv remote rank
    tag: Optional[int] = None         # Send/Recv match key, default 0
    duration_ns: Optional[int] = None  # Calc only
    cpu: int = 0
    nic: int = 0
    label: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == TaskKind.CALC:
            if self.bytes is not None or self.peer is not None or self.tag is not None:
                raise ValueError(f"calc task {self.id} must not carry bytes/peer/tag")
            if self.duration_ns is None or self.duration_ns < 0:
                raise ValueError(f"calc task {self.id} needs duration_ns >= 0")
        else:
            if self.duration_ns is not None:
                raise ValueError(f"{self.kind.name.lower()} task {self.id} must not carry duration_ns")
            if self.bytes is None or self.bytes < 0:
                raise ValueError(f"{self.kind.name.lower()} task {self.id} needs bytes >= 0")
            if self.peer is None or self.peer < 0:
                raise ValueError(f"{self.kind.name.lower()} task {self.id} needs a peer rank")
            if self.tag is None:
                object.__setattr__(self, "tag", 0)
            elif self.tag < 0:
                raise ValueError(f"task {self.id}: tag must be non-negative")
        if self.cpu < 0 or self.nic < 0:
            raise ValueError(f"task {self.id}: cpu/nic must be non-negative")

    @property
    def is_dummy(self) -> bool:
        return (
            self.kind == TaskKind.CALC
            and self.duration_ns == 0
            and self.label is not None
            and self.label.startswith(DUMMY_PREFIX)
        )


@dataclass(frozen=True)
class RankSchedule:
    """Tasks and dependency edges of one rank.

    ``tasks[i].id == i`` (dense ids); ``deps`` holds (before, after) edges.
    ``job_id`` tags the rank for multi-job statistics; like labels it is
    metadata outside structural equality (the binary format drops it).
    """

    rank: int
    tasks: tuple[Task, ...] = ()
    deps: frozenset[tuple[int, int]] = frozenset()
    job_id: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "deps", frozenset(self.deps))
        for i, t in enumerate(self.tasks):
            if t.id != i:
                raise ValueError(f"rank {self.rank}: task ids must be dense, got {t.id} at index {i}")
        n = len(self.tasks)
        for before, after in self.deps:
            if not (0 <= before < n and 0 <= after < n):
                raise ValueError(f"rank {self.rank}: dep ({before},{after}) references unknown task")

    def predecessors(self) -> dict[int, list[int]]:
        preds: dict[int, list[int]] = {t.id: [] for t in self.tasks}
        for before, after in sorted(self.deps):
            preds[after].append(before)
        return preds

    def successors(self) -> dict[int, list[int]]:
        succs: dict[int, list[int]] = {t.id: [] for t in self.tasks}
        for before, after in sorted(self.deps):
            succs[before].append(after)
        return succs


@dataclass(frozen=True)
class GoalSchedule:
    """A complete schedule: one RankSchedule per rank id 0..num_ranks-1."""

    num_ranks: int
    ranks: tuple[RankSchedule, ...]

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(self.ranks))
        if self.num_ranks < 1:
            raise ValueError("num_ranks must be >= 1")
        if len(self.ranks) != self.num_ranks:
            raise ValueError(f"expected {self.num_ranks} rank blocks, got {len(self.ranks)}")
        for i, r in enumerate(self.ranks):
            if r.rank != i:
                raise ValueError(f"rank block {i} carries rank id {r.rank}")

    def task_count(self) -> int:
        return sum(len(r.tasks) for r in self.ranks)

    def non_dummy_task_count(self) -> int:
        return sum(1 for r in self.ranks for t in r.tasks if not t.is_dummy)

    def edge_count(self) -> int:
        return sum(len(r.deps) for r in self.ranks)


class ScheduleBuilder:
    """Incremental constructor used by the generators.

    Task ids are handed out densely per rank; labels default to ``t<id>``
    so that every in-memory schedule survives the textual round trip with
    exact label equality.
    """

    def __init__(self, num_ranks: int):
        if num_ranks < 1:
            raise ValueError("num_ranks must be >= 1")
        self.num_ranks = num_ranks
        self._tasks: list[list[Task]] = [[] for _ in range(num_ranks)]
        self._deps: list[set[tuple[int, int]]] = [set() for _ in range(num_ranks)]
        self._job_ids: list[int] = [0] * num_ranks
        self._labels: list[set[str]] = [set() for _ in range(num_ranks)]

    def _add(self, rank: int, task: Task) -> int:
        if not 0 <= rank < self.num_ranks:
            raise ValueError(f"rank {rank} out of range [0, {self.num_ranks})")
        if task.label is not None:
            if task.label in self._labels[rank]:
                raise ValueError(f"rank {rank}: duplicate label {task.label!r}")
            self._labels[rank].add(task.label)
        self._tasks[rank].append(task)
        return task.id

    def _next_id(self, rank: int) -> int:
        return len(self._tasks[rank])

    def send(self, rank: int, peer: int, bytes: int, *, tag: int = 0,
             cpu: int = 0, nic: int = 0, label: Optional[str] = None) -> int:
        if peer == rank:
            raise ValueError(f"rank {rank}: send to self")
        tid = self._next_id(rank)
        return self._add(rank, Task(tid, TaskKind.SEND, bytes=bytes, peer=peer,
                                    tag=tag, cpu=cpu, nic=nic,
                                    label=label if label is not None else f"t{tid}"))

    def recv(self, rank: int, peer: int, bytes: int, *, tag: int = 0,
             cpu: int = 0, nic: int = 0, label: Optional[str] = None) -> int:
        if peer == rank:
            raise ValueError(f"rank {rank}: recv from self")
        tid = self._next_id(rank)
        return self._add(rank, Task(tid, TaskKind.RECV, bytes=bytes, peer=peer,
                                    tag=tag, cpu=cpu, nic=nic,
                                    label=label if label is not None else f"t{tid}"))

    def calc(self, rank: int, duration_ns: int, *, cpu: int = 0,
             label: Optional[str] = None) -> int:
        tid = self._next_id(rank)
        return self._add(rank, Task(tid, TaskKind.CALC, duration_ns=duration_ns,
                                    cpu=cpu,
                                    label=label if label is not None else f"t{tid}"))

    def dummy(self, rank: int, *, name: str = "") -> int:
        tid = self._next_id(rank)
        return self.calc(rank, 0, label=f"{DUMMY_PREFIX}_{name}{tid}")

    def require(self, rank: int, before: int, after: int) -> None:
        n = self._next_id(rank)
        if not (0 <= before < n and 0 <= after < n):
            raise ValueError(f"rank {rank}: dep ({before},{after}) references unknown task")
        self._deps[rank].add((before, after))

    def set_job_id(self, rank: int, job_id: int) -> None:
        self._job_ids[rank] = job_id

    def build(self) -> GoalSchedule:
        ranks = tuple(
            RankSchedule(rank=r, tasks=tuple(self._tasks[r]),
                         deps=frozenset(self._deps[r]), job_id=self._job_ids[r])
            for r in range(self.num_ranks)
        )
        return GoalSchedule(num_ranks=self.num_ranks, ranks=ranks)


# ---------------------------------------------------------------------------
# Validation

@dataclass(frozen=True)
class ValidationReport:
    """Structural problems found in a schedule; empty means simulation-ready."""

    cycles: tuple[tuple[int, tuple[int, ...]], ...] = ()      # (rank, witness path)
    peer_out_of_range: tuple[tuple[int, int], ...] = ()       # (rank, task id)
    self_sends: tuple[tuple[int, int], ...] = ()              # (rank, task id)
    mismatches: tuple[tuple[int, int, int, int, int], ...] = ()  # (src, dst, tag, sends, recvs)

    @property
    def ok(self) -> bool:
        return not (self.cycles or self.peer_out_of_range or self.self_sends or self.mismatches)

    def summary(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        for rank, path in self.cycles:
            parts.append(f"cycle on rank {rank}: {'->'.join(map(str, path))}")
        for rank, tid in self.peer_out_of_range:
            parts.append(f"rank {rank} task {tid}: peer out of range")
        for rank, tid in self.self_sends:
            parts.append(f"rank {rank} task {tid}: self send/recv")
        for src, dst, tag, ns, nr in self.mismatches:
            parts.append(f"({src}->{dst}, tag {tag}): {ns} sends vs {nr} recvs")
        return "; ".join(parts)


def _find_cycle(rank: RankSchedule) -> Optional[tuple[int, ...]]:
    """Return one witness path [a, ..., a] if the rank's deps contain a cycle."""
    succs = rank.successors()
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {t.id: WHITE for t in rank.tasks}
    for start in color:
        if color[start] != WHITE:
            continue
        stack: list[tuple[int, Iterable[int]]] = [(start, iter(succs[start]))]
        color[start] = GRAY
        path = [start]
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GRAY:
                    i = path.index(nxt)
                    return tuple(path[i:] + [nxt])
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    path.append(nxt)
                    stack.append((nxt, iter(succs[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                path.pop()
                stack.pop()
    return None


def validate(s: GoalSchedule) -> ValidationReport:
    """Check the invariants a schedule must satisfy before simulation."""
    cycles = []
    peer_oor = []
    self_sends = []
    send_counts: dict[tuple[int, int, int], int] = {}
    recv_counts: dict[tuple[int, int, int], int] = {}

    for r in s.ranks:
        witness = _find_cycle(r)
        if witness is not None:
            cycles.append((r.rank, witness))
        for t in r.tasks:
            if t.kind == TaskKind.CALC:
                continue
            if t.peer == r.rank:
                self_sends.append((r.rank, t.id))
            elif not 0 <= t.peer < s.num_ranks:
                peer_oor.append((r.rank, t.id))
            elif t.kind == TaskKind.SEND:
                send_counts[(r.rank, t.peer, t.tag)] = send_counts.get((r.rank, t.peer, t.tag), 0) + 1
            else:
                recv_counts[(t.peer, r.rank, t.tag)] = recv_counts.get((t.peer, r.rank, t.tag), 0) + 1

    mismatches = []
    for key in sorted(set(send_counts) | set(recv_counts)):
        ns, nr = send_counts.get(key, 0), recv_counts.get(key, 0)
        if ns != nr:
            mismatches.append((*key, ns, nr))

    return ValidationReport(
        cycles=tuple(cycles),
        peer_out_of_range=tuple(peer_oor),
        self_sends=tuple(self_sends),
        mismatches=tuple(mismatches),
    )


# ---------------------------------------------------------------------------
# Rank remapping and multi-tenant merging

def remap_ranks(s: GoalSchedule, mapping: Mapping[int, int], new_num_ranks: int) -> GoalSchedule:
    """Rewrite rank ids and peers through an injective mapping.

    Target ranks not covered by the mapping come out empty; DAG structure
    is unchanged.
    """
    targets = list(mapping.values())
    if len(set(targets)) != len(targets):
        raise ValueError("rank mapping is not injective")
    for old, new in mapping.items():
        if not 0 <= new < new_num_ranks:
            raise ValueError(f"mapping target {new} out of range [0, {new_num_ranks})")
    for r in s.ranks:
        if r.tasks and r.rank not in mapping:
            raise ValueError(f"rank {r.rank} has tasks but no mapping entry")

    blocks: dict[int, RankSchedule] = {}
    for r in s.ranks:
        if r.rank not in mapping:
            continue
        new_rank = mapping[r.rank]
        new_tasks = []
        for t in r.tasks:
            if t.kind == TaskKind.CALC:
                new_tasks.append(t)
            else:
                if t.peer not in mapping:
                    raise ValueError(f"rank {r.rank} task {t.id}: peer {t.peer} not in mapping")
                new_tasks.append(replace(t, peer=mapping[t.peer]))
        blocks[new_rank] = RankSchedule(rank=new_rank, tasks=tuple(new_tasks),
                                        deps=r.deps, job_id=r.job_id)

    ranks = tuple(
        blocks.get(i, RankSchedule(rank=i)) for i in range(new_num_ranks)
    )
    return GoalSchedule(num_ranks=new_num_ranks, ranks=ranks)


def _rename_collisions(label: Optional[str], part_idx: int, used: set[str]) -> Optional[str]:
    if label is None:
        return None
    if label not in used:
        used.add(label)
        return label
    candidate = f"{label}.p{part_idx}"
    k = 2
    while candidate in used:
        candidate = f"{label}.p{part_idx}.{k}"
        k += 1
    used.add(candidate)
    return candidate


def merge_tenants(parts: Sequence[tuple[GoalSchedule, Mapping[int, int]]],
                  num_ranks: Optional[int] = None) -> GoalSchedule:
    """Combine several schedules onto one system.

    Each part comes with its own injective rank mapping; distinct parts may
    map onto the same target rank (co-tenancy).  Where k >= 2 sub-DAGs land
    on one rank, a zero-cost dummy root fans out to every sub-DAG's roots
    and a dummy sink joins their sinks, so all tenants start at t=0.

    Tags are namespaced per part (part k's tags shift by k times a common
    stride): tenants are separate applications whose messages must never
    cross-match, even when co-located.  Compute streams of co-located
    tenants are likewise remapped to disjoint cpu ranges; tenancy models
    contention for the network, not for compute lanes.
    """
    if not parts:
        raise ValueError("merge_tenants needs at least one part")
    max_target = -1
    for s, mapping in parts:
        targets = list(mapping.values())
        if len(set(targets)) != len(targets):
            raise ValueError("rank mapping is not injective")
        if targets:
            max_target = max(max_target, max(targets))
    if num_ranks is None:
        num_ranks = max_target + 1
    if max_target >= num_ranks:
        raise ValueError(f"mapping target {max_target} out of range [0, {num_ranks})")

    tag_stride = 1 + max((t.tag for s, _ in parts for r in s.ranks
                          for t in r.tasks if t.tag is not None), default=0)

    # Per target rank: list of (part index, remapped RankSchedule).
    per_rank: dict[int, list[tuple[int, RankSchedule]]] = {}
    for part_idx, (s, mapping) in enumerate(parts):
        remapped = remap_ranks(s, mapping, num_ranks)
        for r in remapped.ranks:
            if part_idx and any(t.kind != TaskKind.CALC for t in r.tasks):
                r = RankSchedule(
                    rank=r.rank,
                    tasks=tuple(t if t.kind == TaskKind.CALC
                                else replace(t, tag=t.tag + part_idx * tag_stride)
                                for t in r.tasks),
                    deps=r.deps, job_id=r.job_id)
            if r.tasks:
                per_rank.setdefault(r.rank, []).append((part_idx, r))

    blocks = []
    for rank in range(num_ranks):
        subs = per_rank.get(rank, [])
        if not subs:
            blocks.append(RankSchedule(rank=rank))
            continue
        if len(subs) == 1:
            _, sub = subs[0]
            blocks.append(RankSchedule(rank=rank, tasks=sub.tasks, deps=sub.deps,
                                       job_id=sub.job_id))
            continue

        # Co-tenancy: concatenate sub-DAGs, then bracket them with dummies.
        tasks: list[Task] = []
        deps: set[tuple[int, int]] = set()
        used_labels: set[str] = set()
        sub_roots: list[list[int]] = []
        sub_sinks: list[list[int]] = []
        cpu_base = 0
        for part_idx, sub in subs:
            offset = len(tasks)
            for t in sub.tasks:
                tasks.append(replace(
                    t, id=t.id + offset, cpu=t.cpu + cpu_base,
                    label=_rename_collisions(t.label, part_idx, used_labels)))
            cpu_base += 1 + max((t.cpu for t in sub.tasks), default=0)
            for before, after in sub.deps:
                deps.add((before + offset, after + offset))
            has_in = {after for _, after in sub.deps}
            has_out = {before for before, _ in sub.deps}
            sub_roots.append([t.id + offset for t in sub.tasks if t.id not in has_in])
            sub_sinks.append([t.id + offset for t in sub.tasks if t.id not in has_out])

        root_id = len(tasks)
        tasks.append(Task(root_id, TaskKind.CALC, duration_ns=0,
                          label=f"{DUMMY_PREFIX}_root{root_id}"))
        sink_id = len(tasks)
        tasks.append(Task(sink_id, TaskKind.CALC, duration_ns=0,
                          label=f"{DUMMY_PREFIX}_sink{sink_id}"))
        for roots in sub_roots:
            for r_id in roots:
                deps.add((root_id, r_id))
        for sinks in sub_sinks:
            for s_id in sinks:
                deps.add((s_id, sink_id))

        # job_id is a per-rank statistic tag; with co-tenancy it keeps the
        # first part's id (per-task attribution is out of scope).
        blocks.append(RankSchedule(rank=rank, tasks=tuple(tasks),
                                   deps=frozenset(deps), job_id=subs[0][1].job_id))

    return GoalSchedule(num_ranks=num_ranks, ranks=tuple(blocks))

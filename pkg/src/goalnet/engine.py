"""Schedule execution engine.

Walks GoalSchedule DAGs and drives a network backend through a four-call
contract: ``post_send`` / ``post_recv`` / ``post_calc`` to hand over
eligible tasks, and ``next_completion`` to pull finished events back in
non-decreasing virtual-time order.  The engine is the single driver; a
backend never calls back into it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence

from .model import (
    GoalSchedule,
    RankSchedule,
    TaskKind,
    merge_tenants,
    validate,
)

Handle = tuple[int, int]  # (rank, task id)


@dataclass(frozen=True)
class SimEventRecord:
    """A completed backend event.

    ``delivered_ns`` is set on Recv completions: the instant the last byte
    of the matched message became available at the receiver (before any
    receiver-side processing).  ``matched_send`` names the Send task whose
    message this Recv consumed, so message completion times need no
    engine-side guessing.  ``start_ns`` is when the task began occupying
    its resource (used for busy-time accounting).
    """

    handle: Handle
    completion_ns: float
    kind: TaskKind
    start_ns: float = 0.0
    delivered_ns: Optional[float] = None
    matched_send: Optional[Handle] = None


class Backend(Protocol):
    """Operation surface a network-simulation backend must provide."""

    def simulation_setup(self, config: Mapping) -> None: ...

    def post_send(self, handle: Handle, src: int, dst: int, bytes: int,
                  tag: int, t_ready: float, *, cpu: int = 0, nic: int = 0) -> None: ...

    def post_recv(self, handle: Handle, dst: int, src: int, bytes: int,
                  tag: int, t_ready: float, *, cpu: int = 0, nic: int = 0) -> None: ...

    def post_calc(self, handle: Handle, rank: int, cpu: int,
                  duration_ns: int, t_ready: float) -> None: ...

    def next_completion(self) -> Optional[SimEventRecord]: ...


class DeadlockError(RuntimeError):
    """Raised when the backend is exhausted but tasks remain.

    ``blocked`` maps each unfinished task handle to its unmet dependency
    handles (empty list = posted to the backend but never completed, e.g. a
    send with no matching recv).
    """

    def __init__(self, blocked: dict[Handle, list[Handle]]):
        self.blocked = blocked
        lines = []
        for handle, unmet in sorted(blocked.items())[:10]:
            if unmet:
                lines.append(f"task {handle} waiting on {unmet}")
            else:
                lines.append(f"task {handle} posted but never completed")
        more = len(blocked) - 10
        if more > 0:
            lines.append(f"... and {more} more")
        super().__init__("simulation deadlocked: " + "; ".join(lines))


@dataclass
class MessageRecord:
    src: int
    dst: int
    tag: int
    bytes: int
    post_ns: float       # send task became eligible
    delivery_ns: float   # last byte available at the receiver
    send_handle: Handle
    recv_handle: Handle

    @property
    def mct_ns(self) -> float:
        return self.delivery_ns - self.post_ns


@dataclass
class ExecutionRecord:
    """Raw outcome of one run: completion times and message log."""

    completions: dict[Handle, SimEventRecord]
    messages: list[MessageRecord]
    post_times: dict[Handle, float]

    def makespan(self) -> float:
        if not self.completions:
            return 0.0
        return max(ev.completion_ns for ev in self.completions.values())


def execute(s: GoalSchedule, backend: Backend,
            config: Optional[Mapping] = None) -> ExecutionRecord:
    """Run the DAG walk against a backend and collect raw completions.

    A task is posted once all predecessors have completed, with
    ``t_ready`` equal to the max predecessor completion time.  Posting
    order is deterministic: roots by (rank, id), then dependents in id
    order as their last predecessor's completion event is drained.
    """
    report = validate(s)
    if not report.ok:
        raise ValueError(f"schedule failed validation: {report.summary()}")

    backend.simulation_setup(config or {})

    preds: dict[Handle, list[Handle]] = {}
    succs: dict[Handle, list[Handle]] = {}
    indegree: dict[Handle, int] = {}
    for r in s.ranks:
        for t in r.tasks:
            h = (r.rank, t.id)
            preds[h] = []
            succs[h] = []
            indegree[h] = 0
    for r in s.ranks:
        for before, after in sorted(r.deps):
            preds[(r.rank, after)].append((r.rank, before))
            succs[(r.rank, before)].append((r.rank, after))
            indegree[(r.rank, after)] += 1

    post_times: dict[Handle, float] = {}

    def post(handle: Handle, t_ready: float) -> None:
        rank, tid = handle
        task = s.ranks[rank].tasks[tid]
        post_times[handle] = t_ready
        if task.kind == TaskKind.SEND:
            backend.post_send(handle, rank, task.peer, task.bytes, task.tag,
                              t_ready, cpu=task.cpu, nic=task.nic)
        elif task.kind == TaskKind.RECV:
            backend.post_recv(handle, rank, task.peer, task.bytes, task.tag,
                              t_ready, cpu=task.cpu, nic=task.nic)
        else:
            backend.post_calc(handle, rank, task.cpu, task.duration_ns, t_ready)

    for r in s.ranks:
        for t in r.tasks:
            if indegree[(r.rank, t.id)] == 0:
                post((r.rank, t.id), 0.0)

    total = s.task_count()
    completions: dict[Handle, SimEventRecord] = {}
    messages: list[MessageRecord] = []
    last_t = 0.0

    while len(completions) < total:
        ev = backend.next_completion()
        if ev is None:
            blocked = {
                h: [p for p in preds[h] if p not in completions]
                for h in indegree
                if h not in completions
            }
            raise DeadlockError(blocked)
        if ev.completion_ns < last_t:
            raise RuntimeError(
                f"backend clock went backwards: {ev.completion_ns} < {last_t}")
        last_t = ev.completion_ns
        if ev.handle in completions:
            raise RuntimeError(f"task {ev.handle} completed twice")
        completions[ev.handle] = ev

        if ev.kind == TaskKind.RECV and ev.matched_send is not None:
            rank, tid = ev.handle
            task = s.ranks[rank].tasks[tid]
            messages.append(MessageRecord(
                src=task.peer, dst=rank, tag=task.tag, bytes=task.bytes,
                post_ns=post_times[ev.matched_send],
                delivery_ns=ev.delivered_ns if ev.delivered_ns is not None else ev.completion_ns,
                send_handle=ev.matched_send, recv_handle=ev.handle))

        for dep in succs[ev.handle]:
            indegree[dep] -= 1
            if indegree[dep] == 0:
                t_ready = max(completions[p].completion_ns for p in preds[dep])
                post(dep, t_ready)

    messages.sort(key=lambda m: (m.post_ns, m.src, m.dst, m.tag))
    return ExecutionRecord(completions=completions, messages=messages,
                           post_times=post_times)


# ---------------------------------------------------------------------------
# Statistics

def nearest_rank_percentile(sorted_vals: Sequence[float], p: float) -> float:
    """Nearest-rank percentile on an already-sorted sequence."""
    if not sorted_vals:
        raise ValueError("no samples")
    import math
    idx = max(1, math.ceil(p / 100.0 * len(sorted_vals)))
    return sorted_vals[idx - 1]


@dataclass
class StatsReport:
    makespan_ns: float
    jobs: dict[int, float]
    mct: Optional[dict[str, float]]
    ranks: dict[int, dict[str, float]]
    drops: int = 0
    queue_samples: list = field(default_factory=list)
    messages: list[MessageRecord] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "makespan_ns": self.makespan_ns,
            "jobs": {str(k): v for k, v in sorted(self.jobs.items())},
            "mct": self.mct,
            "ranks": {str(k): v for k, v in sorted(self.ranks.items())},
            "drops": self.drops,
            "queue_samples": self.queue_samples,
        }

    def to_json(self, **extra) -> str:
        d = self.to_json_dict()
        d.update(extra)
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    def messages_csv(self) -> str:
        lines = ["src,dst,tag,bytes,post_ns,delivery_ns,mct_ns"]
        for m in self.messages:
            lines.append(f"{m.src},{m.dst},{m.tag},{m.bytes},"
                         f"{m.post_ns!r},{m.delivery_ns!r},{m.mct_ns!r}")
        return "\n".join(lines) + "\n"


def mct_summary(mcts: Sequence[float]) -> Optional[dict[str, float]]:
    if not mcts:
        return None
    import math
    vals = sorted(mcts)
    return {
        "mean": math.fsum(vals) / len(vals),
        "p50": nearest_rank_percentile(vals, 50),
        "p99": nearest_rank_percentile(vals, 99),
        "max": vals[-1],
    }


def compute_stats(record: ExecutionRecord, s: GoalSchedule,
                  net_stats: Optional[Mapping] = None) -> StatsReport:
    """Aggregate an execution record.

    Dummy tasks are excluded from busy-time accounting; per-rank busy is
    the summed resource occupancy (completion - start) of the rank's
    tasks, idle is makespan minus busy, floored at zero (ranks running
    parallel streams can be busier than wall time).
    """
    makespan = record.makespan()

    jobs: dict[int, float] = {}
    for r in s.ranks:
        if not r.tasks:
            continue
        job_max = 0.0
        for t in r.tasks:
            ev = record.completions.get((r.rank, t.id))
            if ev is not None and not t.is_dummy:
                job_max = max(job_max, ev.completion_ns)
        jobs[r.job_id] = max(jobs.get(r.job_id, 0.0), job_max)

    ranks: dict[int, dict[str, float]] = {}
    for r in s.ranks:
        busy = 0.0
        for t in r.tasks:
            ev = record.completions.get((r.rank, t.id))
            if ev is not None and not t.is_dummy:
                busy += ev.completion_ns - ev.start_ns
        ranks[r.rank] = {"busy_ns": busy, "idle_ns": max(0.0, makespan - busy)}

    report = StatsReport(
        makespan_ns=makespan,
        jobs=jobs,
        mct=mct_summary([m.mct_ns for m in record.messages]),
        ranks=ranks,
        messages=list(record.messages),
    )
    if net_stats:
        report.drops = int(net_stats.get("drops", 0))
        report.queue_samples = list(net_stats.get("queue_samples", []))
    return report


def run_simulation(s: GoalSchedule, backend: Backend,
                   config: Optional[Mapping] = None) -> StatsReport:
    """Execute a schedule and return aggregated statistics."""
    record = execute(s, backend, config)
    net_stats = getattr(backend, "net_stats", None)
    return compute_stats(record, s, net_stats() if callable(net_stats) else None)


# ---------------------------------------------------------------------------
# Job placement

def _with_job_id(s: GoalSchedule, job_id: int) -> GoalSchedule:
    ranks = tuple(
        RankSchedule(rank=r.rank, tasks=r.tasks, deps=r.deps, job_id=job_id)
        for r in s.ranks
    )
    return GoalSchedule(num_ranks=s.num_ranks, ranks=ranks)


def place_jobs(jobs: Sequence[GoalSchedule], strategy: str, system_size: int,
               seed: int = 0) -> GoalSchedule:
    """Assign each job's ranks to system ranks and merge.

    ``packed``: consecutive rank blocks in job order.  ``random``: a seeded
    shuffle of all system ranks dealt to the jobs in order.  Job ``j`` gets
    job_id ``j`` in the merged schedule.
    """
    total = sum(j.num_ranks for j in jobs)
    if total > system_size:
        raise ValueError(f"jobs need {total} ranks, system has {system_size}")

    if strategy == "packed":
        deck = list(range(system_size))
    elif strategy == "random":
        import random as _random
        deck = list(range(system_size))
        _random.Random(seed).shuffle(deck)
    else:
        raise ValueError(f"unknown placement strategy {strategy!r}")

    parts = []
    offset = 0
    for idx, job in enumerate(jobs):
        mapping = {i: deck[offset + i] for i in range(job.num_ranks)}
        parts.append((_with_job_id(job, idx), mapping))
        offset += job.num_ranks
    return merge_tenants(parts, num_ranks=system_size)

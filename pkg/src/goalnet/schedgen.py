"""Schedule generation from synthetic patterns and MPI-style traces.

Collectives are substituted by point-to-point algorithms; the gap between
consecutive trace events becomes a calc task (max(0, next start - prev
end)), which is how computation is inferred from timestamps.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .model import GoalSchedule, ScheduleBuilder

TAG_BASE = 1 << 16  # tags below this are reserved for plain P2P traffic


# ---------------------------------------------------------------------------
# Task fragments: per-rank sub-DAGs produced by collective expansion

@dataclass
class FragTask:
    """One task of a fragment; ``peer`` is a rank (or GPU id upstream in
    the GPU pipeline).  ``pair_id`` links matching send/recv endpoints."""

    kind: str                      # "send" | "recv" | "calc"
    bytes: int = 0
    peer: int = -1
    tag: int = 0
    duration_ns: int = 0
    label: Optional[str] = None
    pair_id: Optional[int] = None


@dataclass
class Fragment:
    """A small DAG to be spliced into a rank's schedule."""

    tasks: list[FragTask] = field(default_factory=list)
    deps: list[tuple[int, int]] = field(default_factory=list)

    def add(self, task: FragTask, *requires: int) -> int:
        idx = len(self.tasks)
        self.tasks.append(task)
        for r in requires:
            self.deps.append((r, idx))
        return idx

    def roots(self) -> list[int]:
        has_in = {after for _, after in self.deps}
        return [i for i in range(len(self.tasks)) if i not in has_in]

    def sinks(self) -> list[int]:
        has_out = {before for before, _ in self.deps}
        return [i for i in range(len(self.tasks)) if i not in has_out]

    def splice(self, b: ScheduleBuilder, rank: int, after: Sequence[int],
               cpu: int = 0, label_prefix: str = "") -> list[int]:
        """Append this fragment to a rank, making every root depend on the
        ``after`` task ids; returns the spliced sink ids.  ``label_prefix``
        keeps labels unique when one rank hosts several instances."""
        ids = []
        for t in self.tasks:
            label = None if t.label is None else label_prefix + t.label
            if t.kind == "calc":
                ids.append(b.calc(rank, t.duration_ns, cpu=cpu, label=label))
            elif t.kind == "send":
                ids.append(b.send(rank, t.peer, t.bytes, tag=t.tag, cpu=cpu,
                                  label=label))
            else:
                ids.append(b.recv(rank, t.peer, t.bytes, tag=t.tag, cpu=cpu,
                                  label=label))
        for before, after_idx in self.deps:
            b.require(rank, ids[before], ids[after_idx])
        for root in self.roots():
            for a in after:
                b.require(rank, a, ids[root])
        return [ids[s] for s in self.sinks()]


# ---------------------------------------------------------------------------
# Synthetic microbenchmarks

def gen_incast(n: int, nbytes: int) -> GoalSchedule:
    """Ranks 1..n-1 each send to rank 0."""
    if n < 2:
        raise ValueError("incast needs at least 2 ranks")
    if nbytes < 1:
        raise ValueError("message size must be >= 1 byte")
    b = ScheduleBuilder(n)
    for i in range(1, n):
        b.send(i, 0, nbytes, tag=i, label="in_send")
        b.recv(0, i, nbytes, tag=i, label=f"in_recv{i}")
    return b.build()


def derangement(n: int, seed: int) -> list[int]:
    """Seeded fixed-point-free permutation via rejection sampling."""
    if n < 2:
        raise ValueError("no derangement exists for n < 2")
    rng = random.Random(seed)
    perm = list(range(n))
    while True:
        rng.shuffle(perm)
        if all(perm[i] != i for i in range(n)):
            return list(perm)


def gen_permutation(n: int, nbytes: int, seed: int = 0) -> GoalSchedule:
    """Each rank i sends to pi(i) and receives from pi^-1(i), pi a seeded
    derangement."""
    if nbytes < 1:
        raise ValueError("message size must be >= 1 byte")
    pi = derangement(n, seed)
    b = ScheduleBuilder(n)
    for i in range(n):
        b.send(i, pi[i], nbytes, label="perm_send")
    inv = [0] * n
    for i, p in enumerate(pi):
        inv[p] = i
    for i in range(n):
        b.recv(i, inv[i], nbytes, label="perm_recv")
    return b.build()


def gen_ring_exchange(n: int, nbytes: int, rounds: int = 1) -> GoalSchedule:
    """Each rank sends to (i+1) mod n and receives from (i-1) mod n,
    ``rounds`` times; every round depends on the previous one."""
    if n < 2:
        raise ValueError("ring exchange needs at least 2 ranks")
    if nbytes < 1 or rounds < 1:
        raise ValueError("need nbytes >= 1 and rounds >= 1")
    b = ScheduleBuilder(n)
    for rank in range(n):
        prev: tuple[int, ...] = ()
        for r in range(rounds):
            snd = b.send(rank, (rank + 1) % n, nbytes, tag=r, label=f"rx{r}_send")
            rcv = b.recv(rank, (rank - 1) % n, nbytes, tag=r, label=f"rx{r}_recv")
            for p in prev:
                b.require(rank, p, snd)
                b.require(rank, p, rcv)
            prev = (snd, rcv)
    return b.build()


def gen_microbenchmark(pattern: str, n: int, nbytes: int, *,
                       seed: int = 0, rounds: int = 1) -> GoalSchedule:
    if pattern == "incast":
        return gen_incast(n, nbytes)
    if pattern == "permutation":
        return gen_permutation(n, nbytes, seed)
    if pattern == "ring_exchange":
        return gen_ring_exchange(n, nbytes, rounds)
    raise ValueError(f"unknown pattern {pattern!r}")


# ---------------------------------------------------------------------------
# Collective expansion

SUPPORTED_ALGOS = {
    "ALLREDUCE": {"ring", "recursive_doubling"},
    "BCAST": {"binomial_tree", "linear", "ring"},
    "REDUCE_SCATTER": {"ring"},
    "ALLGATHER": {"ring"},
    "ALLTOALL": {"linear"},
    "BARRIER": {"recursive_doubling"},
}


def expand_collective(op: str, comm: Sequence[int], nbytes: int, algo: str,
                      tag_base: int,
                      reduce_ns_per_byte: float = 0.0) -> dict[int, Fragment]:
    """Expand one collective into per-rank fragments.

    ``comm`` is the ordered participant list; messages carry ``tag_base``
    so overlapping collectives cannot cross-match.
    """
    if len(comm) < 2:
        raise ValueError("collective needs at least 2 participants")
    if len(set(comm)) != len(comm):
        raise ValueError("duplicate ranks in communicator")
    if algo not in SUPPORTED_ALGOS.get(op, ()):
        raise ValueError(f"unsupported (op, algo) pair ({op}, {algo})")

    if op == "ALLREDUCE" and algo == "ring":
        return _ring_steps(comm, math.ceil(nbytes / len(comm)), tag_base,
                           steps=2 * (len(comm) - 1),
                           reduce_steps=len(comm) - 1,
                           reduce_ns_per_byte=reduce_ns_per_byte, name="ar")
    if op == "ALLREDUCE" and algo == "recursive_doubling":
        return _recursive_doubling(comm, nbytes, tag_base, reduce_ns_per_byte,
                                   name="ar")
    if op == "BARRIER":
        return _recursive_doubling(comm, 1, tag_base, 0.0, name="bar")
    if op == "REDUCE_SCATTER":
        return _ring_steps(comm, math.ceil(nbytes / len(comm)), tag_base,
                           steps=len(comm) - 1, reduce_steps=len(comm) - 1,
                           reduce_ns_per_byte=reduce_ns_per_byte, name="rs")
    if op == "ALLGATHER":
        return _ring_steps(comm, math.ceil(nbytes / len(comm)), tag_base,
                           steps=len(comm) - 1, reduce_steps=0,
                           reduce_ns_per_byte=0.0, name="ag")
    if op == "BCAST" and algo == "binomial_tree":
        return _binomial_bcast(comm, nbytes, tag_base)
    if op == "BCAST" and algo == "linear":
        return _linear_bcast(comm, nbytes, tag_base)
    if op == "BCAST" and algo == "ring":
        return _ring_bcast(comm, nbytes, tag_base)
    if op == "ALLTOALL":
        return _linear_alltoall(comm, nbytes, tag_base)
    raise ValueError(f"unsupported (op, algo) pair ({op}, {algo})")


def _ring_steps(comm, chunk, tag, *, steps, reduce_steps,
                reduce_ns_per_byte, name) -> dict[int, Fragment]:
    """Ring pattern: in each step every rank sends one chunk to its ring
    successor and receives one from its predecessor; step s+1's send needs
    step s's recv (the forwarded data) and send (ordering)."""
    p = len(comm)
    frags = {r: Fragment() for r in comm}
    last = {r: {"send": None, "recv": None} for r in comm}
    for s in range(steps):
        for i, rank in enumerate(comm):
            f = frags[rank]
            nxt = comm[(i + 1) % p]
            prv = comm[(i - 1) % p]
            send_reqs = [x for x in (last[rank]["send"], last[rank]["recv"]) if x is not None]
            snd = f.add(FragTask("send", bytes=chunk, peer=nxt, tag=tag,
                                 label=f"{name}_s{s}_snd"), *send_reqs)
            recv_reqs = [x for x in (last[rank]["recv"],) if x is not None]
            rcv = f.add(FragTask("recv", bytes=chunk, peer=prv, tag=tag,
                                 label=f"{name}_s{s}_rcv"), *recv_reqs)
            if s < reduce_steps and reduce_ns_per_byte > 0:
                rcv = f.add(FragTask("calc",
                                     duration_ns=round(chunk * reduce_ns_per_byte),
                                     label=f"{name}_s{s}_red"), rcv)
            last[rank] = {"send": snd, "recv": rcv}
    return frags


def _recursive_doubling(comm, nbytes, tag, reduce_ns_per_byte, name):
    p = len(comm)
    if p & (p - 1):
        raise ValueError("recursive doubling needs a power-of-two communicator")
    rounds = p.bit_length() - 1
    frags = {r: Fragment() for r in comm}
    last = {r: [] for r in comm}
    for k in range(rounds):
        for i, rank in enumerate(comm):
            f = frags[rank]
            partner = comm[i ^ (1 << k)]
            snd = f.add(FragTask("send", bytes=nbytes, peer=partner, tag=tag,
                                 label=f"{name}_r{k}_snd"), *last[rank])
            rcv = f.add(FragTask("recv", bytes=nbytes, peer=partner, tag=tag,
                                 label=f"{name}_r{k}_rcv"), *last[rank])
            if reduce_ns_per_byte > 0:
                rcv = f.add(FragTask("calc",
                                     duration_ns=round(nbytes * reduce_ns_per_byte),
                                     label=f"{name}_r{k}_red"), rcv)
            last[rank] = [snd, rcv]
    return frags


def _binomial_bcast(comm, nbytes, tag):
    p = len(comm)
    rounds = math.ceil(math.log2(p))
    frags = {r: Fragment() for r in comm}
    recv_of = {0: None}  # virtual rank -> recv task index (root has data)
    send_chain: dict[int, Optional[int]] = {i: None for i in range(p)}
    for k in range(rounds):
        for vr in range(min(1 << k, p)):
            target = vr + (1 << k)
            if target >= p:
                continue
            src, dst = comm[vr], comm[target]
            reqs = [x for x in (recv_of.get(vr), send_chain[vr]) if x is not None]
            snd = frags[src].add(FragTask("send", bytes=nbytes, peer=dst, tag=tag,
                                          label=f"bc_r{k}_snd"), *reqs)
            send_chain[vr] = snd
            rcv = frags[dst].add(FragTask("recv", bytes=nbytes, peer=src, tag=tag,
                                          label=f"bc_r{k}_rcv"))
            recv_of[target] = rcv
    return frags


def _linear_bcast(comm, nbytes, tag):
    root, rest = comm[0], comm[1:]
    frags = {r: Fragment() for r in comm}
    prev = None
    for k, dst in enumerate(rest):
        snd = frags[root].add(
            FragTask("send", bytes=nbytes, peer=dst, tag=tag, label=f"bc_snd{k}"),
            *([] if prev is None else [prev]))
        prev = snd
        frags[dst].add(FragTask("recv", bytes=nbytes, peer=root, tag=tag,
                                label="bc_rcv"))
    return frags


def _ring_bcast(comm, nbytes, tag):
    p = len(comm)
    frags = {r: Fragment() for r in comm}
    frags[comm[0]].add(FragTask("send", bytes=nbytes, peer=comm[1], tag=tag,
                                label="bc_snd"))
    for i in range(1, p):
        rank = comm[i]
        rcv = frags[rank].add(FragTask("recv", bytes=nbytes, peer=comm[i - 1],
                                       tag=tag, label="bc_rcv"))
        if i + 1 < p:
            frags[rank].add(FragTask("send", bytes=nbytes, peer=comm[i + 1],
                                     tag=tag, label="bc_fwd"), rcv)
    return frags


def _linear_alltoall(comm, nbytes, tag):
    # bytes is the per-peer payload; sends start at the ring successor to
    # avoid a synchronized incast on rank 0
    p = len(comm)
    frags = {r: Fragment() for r in comm}
    for i, rank in enumerate(comm):
        prev = None
        for off in range(1, p):
            dst = comm[(i + off) % p]
            snd = frags[rank].add(
                FragTask("send", bytes=nbytes, peer=dst, tag=tag,
                         label=f"a2a_snd{off}"),
                *([] if prev is None else [prev]))
            prev = snd
        for off in range(1, p):
            src = comm[(i - off) % p]
            frags[rank].add(FragTask("recv", bytes=nbytes, peer=src, tag=tag,
                                     label=f"a2a_rcv{off}"))
    return frags


# ---------------------------------------------------------------------------
# MPI trace ingestion

P2P_OPS = {"SEND", "RECV"}
COLLECTIVE_OPS = set(SUPPORTED_ALGOS)

DEFAULT_ALGOS = {
    "ALLREDUCE": "ring",
    "BCAST": "binomial_tree",
    "REDUCE_SCATTER": "ring",
    "ALLGATHER": "ring",
    "ALLTOALL": "linear",
    "BARRIER": "recursive_doubling",
}


@dataclass(frozen=True)
class MpiTraceEvent:
    rank: int
    op: str
    bytes: int
    peer: Optional[int] = None          # P2P
    comm: Optional[tuple[int, ...]] = None  # collectives
    root: Optional[int] = None          # BCAST
    tstart_ns: int = 0
    tend_ns: int = 0


class TraceFormatError(ValueError):
    pass


def parse_mpi_trace(sources: Sequence[str]) -> list[list[MpiTraceEvent]]:
    """Parse one CSV trace per rank (rank = position in ``sources``).

    Lines: ``op,bytes,peer_or_root,comm,tstart_ns,tend_ns`` with comm a
    ``-``-joined rank list and ``-`` for unused fields.
    """
    per_rank: list[list[MpiTraceEvent]] = []
    for rank, text in enumerate(sources):
        events: list[MpiTraceEvent] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 6:
                raise TraceFormatError(
                    f"rank {rank} line {lineno}: expected 6 fields, got {len(parts)}")
            op, sbytes, spr, scomm, st0, st1 = parts
            if op not in P2P_OPS | COLLECTIVE_OPS:
                raise TraceFormatError(f"rank {rank} line {lineno}: unknown op {op!r}")
            try:
                nbytes = int(sbytes)
                t0, t1 = int(st0), int(st1)
            except ValueError:
                raise TraceFormatError(
                    f"rank {rank} line {lineno}: malformed numeric field") from None
            if nbytes < 0:
                raise TraceFormatError(f"rank {rank} line {lineno}: negative bytes")
            if t1 < t0:
                raise TraceFormatError(
                    f"rank {rank} line {lineno}: tend_ns precedes tstart_ns")
            peer = root = None
            comm = None
            if op in P2P_OPS:
                if spr == "-":
                    raise TraceFormatError(
                        f"rank {rank} line {lineno}: {op} needs a peer")
                peer = int(spr)
            else:
                if scomm == "-" or not scomm:
                    raise TraceFormatError(
                        f"rank {rank} line {lineno}: {op} needs a comm list")
                if not re.fullmatch(r"\d+(-\d+)*", scomm):
                    raise TraceFormatError(
                        f"rank {rank} line {lineno}: bad comm field {scomm!r}")
                comm = tuple(int(x) for x in scomm.split("-"))
                if rank not in comm:
                    raise TraceFormatError(
                        f"rank {rank} line {lineno}: rank missing from its own comm")
                if op == "BCAST":
                    if spr == "-":
                        raise TraceFormatError(
                            f"rank {rank} line {lineno}: BCAST needs a root")
                    root = int(spr)
            events.append(MpiTraceEvent(rank=rank, op=op, bytes=nbytes, peer=peer,
                                        comm=comm, root=root, tstart_ns=t0,
                                        tend_ns=t1))
        for a, b in zip(events, events[1:]):
            if b.tstart_ns < a.tstart_ns:
                raise TraceFormatError(
                    f"rank {rank}: non-monotonic timestamps "
                    f"({b.tstart_ns} after {a.tstart_ns})")
        per_rank.append(events)

    _check_collective_consistency(per_rank)
    return per_rank


def _check_collective_consistency(per_rank) -> None:
    counts: dict[tuple, dict[int, int]] = {}
    for events in per_rank:
        for e in events:
            if e.comm is None:
                continue
            key = (e.op, e.comm, e.root)
            counts.setdefault(key, {})[e.rank] = counts.get(key, {}).get(e.rank, 0) + 1
    for (op, comm, root), by_rank in sorted(counts.items()):
        expected = max(by_rank.values())
        for member in comm:
            if member >= len(per_rank) or by_rank.get(member, 0) != expected:
                witness = next(r for r, c in by_rank.items() if c == expected)
                raise TraceFormatError(
                    f"collective {op} on comm {comm}: rank {witness} and "
                    f"rank {member} disagree on participation")


def trace_to_goal(per_rank: Sequence[Sequence[MpiTraceEvent]],
                  algos: Optional[Mapping[str, str]] = None,
                  reduce_ns_per_byte: float = 0.0) -> GoalSchedule:
    """Convert parsed trace events into a schedule.

    Gaps between consecutive events become calc tasks; relative start
    skew across ranks is preserved via a leading calc against the global
    epoch (earliest tstart in the trace).
    """
    algo_of = dict(DEFAULT_ALGOS)
    if algos:
        for op, algo in algos.items():
            if op not in SUPPORTED_ALGOS:
                raise ValueError(f"unknown collective op {op!r}")
            algo_of[op] = algo

    num_ranks = len(per_rank)
    b = ScheduleBuilder(max(1, num_ranks))

    # assign one tag base per collective instance, identically on all ranks
    instance_ids: dict[tuple, int] = {}
    occurrence: dict[tuple, int] = {}
    frag_cache: dict[tuple, dict[int, Fragment]] = {}

    epoch = min((ev.tstart_ns for events in per_rank for ev in events), default=0)

    for rank, events in enumerate(per_rank):
        occurrence.clear()
        chain: list[int] = []
        prev_end: Optional[int] = None
        for ev in events:
            gap = (ev.tstart_ns - epoch) if prev_end is None else max(0, ev.tstart_ns - prev_end)
            if gap > 0:
                c = b.calc(rank, gap, label=f"gap{b._next_id(rank)}")
                for p in chain:
                    b.require(rank, p, c)
                chain = [c]
            prev_end = max(ev.tend_ns, prev_end or 0)

            if ev.op == "SEND":
                t = b.send(rank, ev.peer, ev.bytes,
                           label=f"p2p{b._next_id(rank)}_snd")
                for p in chain:
                    b.require(rank, p, t)
                chain = [t]
            elif ev.op == "RECV":
                t = b.recv(rank, ev.peer, ev.bytes,
                           label=f"p2p{b._next_id(rank)}_rcv")
                for p in chain:
                    b.require(rank, p, t)
                chain = [t]
            else:
                okey = (ev.op, ev.comm, ev.root)
                k = occurrence.get(okey, 0)
                occurrence[okey] = k + 1
                ikey = (ev.op, ev.comm, ev.root, k)
                if ikey not in instance_ids:
                    instance_ids[ikey] = len(instance_ids)
                    ordered = ev.comm
                    if ev.op == "BCAST":
                        # root first in the expansion order
                        ordered = (ev.root,) + tuple(r for r in ev.comm if r != ev.root)
                    frag_cache[ikey] = expand_collective(
                        ev.op, ordered, ev.bytes, algo_of[ev.op],
                        TAG_BASE + instance_ids[ikey],
                        reduce_ns_per_byte=reduce_ns_per_byte)
                frag = frag_cache[ikey][rank]
                chain = frag.splice(b, rank, chain,
                                    label_prefix=f"i{instance_ids[ikey]}_")

    return b.build()

"""Schedule generation: patterns, collective algorithms, trace conversion."""

import math

import pytest

from goalnet.engine import run_simulation
from goalnet.loggops import LogGOPSParams, LogGopsBackend
from goalnet.model import GoalSchedule, ScheduleBuilder, TaskKind, validate
from goalnet.schedgen import (
    TAG_BASE,
    Fragment,
    MpiTraceEvent,
    TraceFormatError,
    derangement,
    expand_collective,
    gen_incast,
    gen_microbenchmark,
    gen_permutation,
    gen_ring_exchange,
    parse_mpi_trace,
    trace_to_goal,
)


def sends(s: GoalSchedule, rank: int):
    return [t for t in s.ranks[rank].tasks if t.kind == TaskKind.SEND]


def recvs(s: GoalSchedule, rank: int):
    return [t for t in s.ranks[rank].tasks if t.kind == TaskKind.RECV]


class TestMicrobenchmarks:
    def test_incast_shape(self):
        s = gen_incast(4, 1024)
        assert len(recvs(s, 0)) == 3
        for r in (1, 2, 3):
            (snd,) = sends(s, r)
            assert snd.bytes == 1024 and snd.peer == 0
        assert validate(s).ok

    def test_incast_rejects_small_n(self):
        with pytest.raises(ValueError):
            gen_incast(1, 64)

    def test_permutation_is_derangement(self):
        s = gen_permutation(8, 4096, seed=7)
        assert validate(s).ok
        for i in range(8):
            (snd,) = sends(s, i)
            assert snd.peer != i

    def test_derangement_no_fixed_points_many_seeds(self):
        for seed in range(50):
            pi = derangement(6, seed)
            assert sorted(pi) == list(range(6))
            assert all(pi[i] != i for i in range(6))

    def test_permutation_n1_rejected(self):
        with pytest.raises(ValueError):
            gen_permutation(1, 64, seed=0)

    def test_ring_exchange_two_ranks(self):
        s = gen_ring_exchange(2, 8, 1)
        for r in (0, 1):
            assert len(sends(s, r)) == 1 and len(recvs(s, r)) == 1
            assert sends(s, r)[0].bytes == 8
        assert validate(s).ok

    def test_ring_exchange_rounds_chain(self):
        s = gen_ring_exchange(4, 64, 3)
        # round r tasks have ids 2r, 2r+1; each later round depends on earlier
        r0 = s.ranks[0]
        assert (0, 2) in r0.deps and (1, 2) in r0.deps
        assert (0, 3) in r0.deps and (1, 3) in r0.deps
        assert len(sends(s, 0)) == 3

    def test_dispatcher(self):
        s = gen_microbenchmark("incast", 4, 512)
        assert s.num_ranks == 4
        with pytest.raises(ValueError):
            gen_microbenchmark("butterfly", 4, 512)


def frag_schedule(frags, num_ranks):
    """Splice fragments into an empty schedule for simulation."""
    b = ScheduleBuilder(num_ranks)
    for rank, frag in frags.items():
        frag.splice(b, rank, [])
    return b.build()


class TestExpandCollective:
    def test_ring_allreduce_counts(self):
        frags = expand_collective("ALLREDUCE", [0, 1, 2, 3], 4096, "ring", TAG_BASE)
        for rank, frag in frags.items():
            snd = [t for t in frag.tasks if t.kind == "send"]
            rcv = [t for t in frag.tasks if t.kind == "recv"]
            assert len(snd) == 6 and len(rcv) == 6
            assert all(t.bytes == 1024 for t in snd)

    def test_ring_allreduce_analytic_volume(self):
        p, nbytes = 8, 1 << 20
        frags = expand_collective("ALLREDUCE", list(range(p)), nbytes, "ring", TAG_BASE)
        expect = 2 * (p - 1) * math.ceil(nbytes / p)
        for frag in frags.values():
            assert sum(t.bytes for t in frag.tasks if t.kind == "send") == expect

    def test_ring_allreduce_simulates_clean(self):
        frags = expand_collective("ALLREDUCE", [0, 1, 2, 3], 4096, "ring", TAG_BASE)
        s = frag_schedule(frags, 4)
        assert validate(s).ok
        report = run_simulation(s, LogGopsBackend(LogGOPSParams(S=float("inf"))))
        assert report.makespan_ns > 0

    def test_recursive_doubling_rounds(self):
        frags = expand_collective("ALLREDUCE", [0, 1, 2, 3], 512,
                                  "recursive_doubling", TAG_BASE)
        for frag in frags.values():
            snd = [t for t in frag.tasks if t.kind == "send"]
            assert len(snd) == 2  # log2(4)
            assert all(t.bytes == 512 for t in snd)

    def test_recursive_doubling_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="power-of-two"):
            expand_collective("ALLREDUCE", [0, 1, 2], 512,
                              "recursive_doubling", TAG_BASE)

    def test_barrier_one_byte_rounds(self):
        frags = expand_collective("BARRIER", [0, 1, 2, 3], 0,
                                  "recursive_doubling", TAG_BASE)
        for frag in frags.values():
            msgs = [t for t in frag.tasks if t.kind in ("send", "recv")]
            assert len(msgs) == 4  # 2 rounds x (send + recv)
            assert all(t.bytes == 1 for t in msgs)

    def test_binomial_bcast_pair(self):
        frags = expand_collective("BCAST", [0, 1], 8, "binomial_tree", TAG_BASE)
        assert [t.kind for t in frags[0].tasks] == ["send"]
        assert [t.kind for t in frags[1].tasks] == ["recv"]

    def test_binomial_bcast_rounds(self):
        frags = expand_collective("BCAST", list(range(8)), 64, "binomial_tree",
                                  TAG_BASE)
        s = frag_schedule(frags, 8)
        assert validate(s).ok
        # root sends ceil(log2(8)) times; every other rank receives once
        assert len([t for t in frags[0].tasks if t.kind == "send"]) == 3
        for r in range(1, 8):
            assert len([t for t in frags[r].tasks if t.kind == "recv"]) == 1

    def test_linear_and_ring_bcast(self):
        for algo in ("linear", "ring"):
            frags = expand_collective("BCAST", [0, 1, 2, 3], 128, algo, TAG_BASE)
            s = frag_schedule(frags, 4)
            assert validate(s).ok

    def test_alltoall(self):
        frags = expand_collective("ALLTOALL", [0, 1, 2, 3], 256, "linear", TAG_BASE)
        for frag in frags.values():
            assert len([t for t in frag.tasks if t.kind == "send"]) == 3
            assert len([t for t in frag.tasks if t.kind == "recv"]) == 3
        assert validate(frag_schedule(frags, 4)).ok

    def test_reduce_scatter_allgather(self):
        for op in ("REDUCE_SCATTER", "ALLGATHER"):
            frags = expand_collective(op, [0, 1, 2, 3], 4000, "ring", TAG_BASE)
            for frag in frags.values():
                snd = [t for t in frag.tasks if t.kind == "send"]
                assert len(snd) == 3
                assert all(t.bytes == 1000 for t in snd)
            assert validate(frag_schedule(frags, 4)).ok

    def test_unsupported_pair_rejected(self):
        with pytest.raises(ValueError, match="unsupported"):
            expand_collective("ALLTOALL", [0, 1], 8, "ring", TAG_BASE)

    def test_small_comm_rejected(self):
        with pytest.raises(ValueError):
            expand_collective("ALLREDUCE", [0], 8, "ring", TAG_BASE)

    def test_reduction_cost_inserts_calcs(self):
        frags = expand_collective("ALLREDUCE", [0, 1, 2, 3], 4096, "ring",
                                  TAG_BASE, reduce_ns_per_byte=1.0)
        for frag in frags.values():
            calcs = [t for t in frag.tasks if t.kind == "calc"]
            assert len(calcs) == 3  # reduce-scatter phase only
            assert all(t.duration_ns == 1024 for t in calcs)


TRACE_2RANK_ALLREDUCE = [
    "ALLREDUCE,4096,-,0-1,1000,2500\n",
    "ALLREDUCE,4096,-,0-1,1100,2500\n",
]


class TestParseMpiTrace:
    def test_consistent_collective(self):
        per_rank = parse_mpi_trace(TRACE_2RANK_ALLREDUCE)
        assert len(per_rank) == 2
        assert per_rank[0][0].comm == (0, 1)

    def test_p2p_pair(self):
        per_rank = parse_mpi_trace([
            "SEND,64,1,-,0,10\n",
            "RECV,64,0,-,0,12\n",
        ])
        assert per_rank[0][0].op == "SEND" and per_rank[0][0].peer == 1
        assert per_rank[1][0].op == "RECV" and per_rank[1][0].peer == 0

    def test_comm_mismatch_names_ranks(self):
        with pytest.raises(TraceFormatError, match="rank"):
            parse_mpi_trace([
                "ALLREDUCE,4096,-,0-1,0,10\n",
                "ALLREDUCE,4096,-,0-1-2,0,10\nALLREDUCE,4096,-,0-1-2,20,30\n",
            ])

    def test_malformed_line(self):
        with pytest.raises(TraceFormatError, match="fields"):
            parse_mpi_trace(["SEND,64,1\n"])

    def test_non_monotonic_rejected(self):
        with pytest.raises(TraceFormatError, match="monotonic"):
            parse_mpi_trace(["SEND,64,1,-,100,110\nSEND,64,1,-,50,60\n", ""])

    def test_bad_interval_rejected(self):
        with pytest.raises(TraceFormatError, match="precedes"):
            parse_mpi_trace(["SEND,64,1,-,100,90\n"])

    def test_comments_and_blanks_skipped(self):
        per_rank = parse_mpi_trace(["# header\n\nBARRIER,0,-,0-1,0,5\n",
                                    "BARRIER,0,-,0-1,0,5\n"])
        assert len(per_rank[0]) == 1


class TestTraceToGoal:
    def test_gap_becomes_calc(self):
        per_rank = parse_mpi_trace([
            "SEND,64,1,-,0,10\nSEND,64,1,-,25,30\n",
            "RECV,64,0,-,0,10\nRECV,64,0,-,25,30\n",
        ])
        s = trace_to_goal(per_rank)
        calcs = [t for t in s.ranks[0].tasks if t.kind == TaskKind.CALC]
        assert [c.duration_ns for c in calcs] == [15]

    def test_overlap_clamps_to_zero(self):
        per_rank = parse_mpi_trace([
            "SEND,64,1,-,0,20\nSEND,64,1,-,10,30\n",
            "RECV,64,0,-,0,20\nRECV,64,0,-,10,30\n",
        ])
        s = trace_to_goal(per_rank)
        calcs = [t for t in s.ranks[0].tasks if t.kind == TaskKind.CALC]
        assert calcs == []  # zero gap emits no task

    def test_start_skew_preserved(self):
        per_rank = parse_mpi_trace([
            "SEND,64,1,-,500,510\n",
            "RECV,64,0,-,0,510\n",
        ])
        s = trace_to_goal(per_rank)
        lead = [t for t in s.ranks[0].tasks if t.kind == TaskKind.CALC]
        assert [t.duration_ns for t in lead] == [500]
        assert all(t.kind != TaskKind.CALC for t in s.ranks[1].tasks)

    def test_collective_expansion_counts(self):
        trace = ["ALLREDUCE,4096,-,0-1-2-3,0,10\nBARRIER,0,-,0-1-2-3,20,30\n"] * 4
        per_rank = parse_mpi_trace(trace)
        s = trace_to_goal(per_rank)
        assert validate(s).ok
        total_sends = sum(len(sends(s, r)) for r in range(4))
        assert total_sends == 4 * (6 + 2)  # ring allreduce + 2-round barrier
        report = run_simulation(s, LogGopsBackend(LogGOPSParams(S=float("inf"))))
        assert report.makespan_ns > 0

    def test_unique_tags_per_instance(self):
        trace = ["ALLREDUCE,4096,-,0-1,0,10\nALLREDUCE,4096,-,0-1,20,30\n"] * 2
        s = trace_to_goal(parse_mpi_trace(trace))
        tags = {t.tag for t in s.ranks[0].tasks if t.kind == TaskKind.SEND}
        assert tags == {TAG_BASE, TAG_BASE + 1}

    def test_deterministic(self):
        trace = ["ALLREDUCE,8192,-,0-1-2-3,0,10\n"] * 4
        a = trace_to_goal(parse_mpi_trace(trace))
        c = trace_to_goal(parse_mpi_trace(trace))
        assert a == c

    def test_unknown_algo_rejected(self):
        per_rank = parse_mpi_trace(TRACE_2RANK_ALLREDUCE)
        with pytest.raises(ValueError):
            trace_to_goal(per_rank, algos={"ALLREDUCE": "butterfly"})

    def test_bcast_root_ordering(self):
        trace = ["BCAST,1024,2,0-1-2,0,10\n"] * 3
        s = trace_to_goal(parse_mpi_trace(trace))
        assert validate(s).ok
        assert len(sends(s, 2)) >= 1   # rank 2 is the root
        assert len(recvs(s, 0)) == 1

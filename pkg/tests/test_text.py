"""Textual GOAL format: grammar cases and round-trip properties."""

import random

import pytest

from goalnet.goal_text import GoalSyntaxError, emit_text, parse_text
from goalnet.model import ScheduleBuilder, TaskKind
from conftest import random_schedule


FIG_EXAMPLE = """\
num_ranks 2
rank 0 {
  l1: calc 10
  l2: send 8b to 1
  l3: recv 8b from 1 cpu 1
  l2 requires l1
}
rank 1 {
  r1: recv 8b from 0
  r2: send 8b to 0
}
"""


def test_three_task_dag():
    s = parse_text(FIG_EXAMPLE)
    r0 = s.ranks[0]
    assert [t.label for t in r0.tasks] == ["l1", "l2", "l3"]
    assert r0.tasks[0].kind == TaskKind.CALC and r0.tasks[0].duration_ns == 10
    assert r0.tasks[1].kind == TaskKind.SEND and r0.tasks[1].peer == 1
    assert r0.tasks[2].kind == TaskKind.RECV and r0.tasks[2].cpu == 1
    assert r0.deps == frozenset({(0, 1)})


def test_empty_rank_block():
    s = parse_text("num_ranks 1\nrank 0 {\n}\n")
    assert s.num_ranks == 1
    assert s.ranks[0].tasks == ()


def test_single_line_block():
    s = parse_text("num_ranks 1\nrank 0 { c0: calc 10 }\n")
    assert s.ranks[0].tasks[0].duration_ns == 10


def test_comments_and_whitespace():
    src = "num_ranks 1  # one rank\nrank 0 {\n   a:   calc   5   # padding\n}\n"
    s = parse_text(src)
    assert s.ranks[0].tasks[0].label == "a"


def test_defaults_are_zero():
    s = parse_text("num_ranks 2\nrank 0 { a: send 4b to 1 }\nrank 1 { b: recv 4b from 0 }\n")
    t = s.ranks[0].tasks[0]
    assert (t.tag, t.cpu, t.nic) == (0, 0, 0)


def test_all_options():
    s = parse_text("num_ranks 2\nrank 0 { a: send 4b to 1 tag 7 cpu 2 nic 1 }\n"
                   "rank 1 { b: recv 4b from 0 tag 7 cpu 2 nic 1 }\n")
    t = s.ranks[0].tasks[0]
    assert (t.tag, t.cpu, t.nic) == (7, 2, 1)


def test_job_header_roundtrip():
    b = ScheduleBuilder(1)
    b.calc(0, 5)
    b.set_job_id(0, 3)
    s = b.build()
    text = emit_text(s)
    assert "rank 0 job 3 {" in text
    assert parse_text(text).ranks[0].job_id == 3


class TestErrors:
    def test_syntax_error_has_position(self):
        with pytest.raises(GoalSyntaxError) as ei:
            parse_text("num_ranks 1\nrank 0 {\n  a: calc x\n}\n")
        assert ei.value.line == 3

    def test_unknown_label_in_requires(self):
        with pytest.raises(GoalSyntaxError, match="unknown label"):
            parse_text("num_ranks 1\nrank 0 {\n a: calc 1\n a requires ghost\n}\n")

    def test_duplicate_label(self):
        with pytest.raises(GoalSyntaxError, match="duplicate label"):
            parse_text("num_ranks 1\nrank 0 {\n a: calc 1\n a: calc 2\n}\n")

    def test_peer_out_of_range(self):
        with pytest.raises(GoalSyntaxError):
            parse_text("num_ranks 1\nrank 0 {\n a: send 4b to 3\n}\n")

    def test_cycle_detected(self):
        src = ("num_ranks 1\nrank 0 {\n a: calc 1\n b: calc 1\n"
               " a requires b\n b requires a\n}\n")
        with pytest.raises(GoalSyntaxError, match="cycle"):
            parse_text(src)

    def test_missing_byte_suffix(self):
        with pytest.raises(GoalSyntaxError, match="byte count"):
            parse_text("num_ranks 2\nrank 0 { a: send 4 to 1 }\nrank 1 {}\n")

    def test_missing_rank_block(self):
        with pytest.raises(GoalSyntaxError, match="missing rank"):
            parse_text("num_ranks 2\nrank 0 {\n}\n")

    def test_self_send_rejected(self):
        with pytest.raises(GoalSyntaxError):
            parse_text("num_ranks 1\nrank 0 { a: send 4b to 0 }\n")


class TestRoundTrip:
    def test_single_calc_emission_shape(self):
        b = ScheduleBuilder(1)
        b.calc(0, 10, label="c0")
        text = emit_text(b.build())
        lines = [ln.strip() for ln in text.strip().splitlines()]
        assert lines[0] == "num_ranks 1"
        assert "c0: calc 10" in lines

    def test_fig_schedule_roundtrip(self):
        s = parse_text(FIG_EXAMPLE)
        assert parse_text(emit_text(s)) == s

    def test_labels_survive(self):
        s = parse_text(FIG_EXAMPLE)
        s2 = parse_text(emit_text(s))
        assert [t.label for t in s2.ranks[0].tasks] == ["l1", "l2", "l3"]

    def test_fifty_task_roundtrip_by_label(self, rng):
        s = random_schedule(rng, max_ranks=3, max_tasks=50)
        s2 = parse_text(emit_text(s))
        assert s2 == s
        for r, r2 in zip(s.ranks, s2.ranks):
            by_label = {t.label: t for t in r.tasks}
            by_label2 = {t.label: t for t in r2.tasks}
            assert by_label.keys() == by_label2.keys()
            for k in by_label:
                assert by_label[k] == by_label2[k]

    def test_thousand_task_fuzz_roundtrip(self, rng):
        s = random_schedule(rng, max_ranks=8, max_tasks=1000)
        assert parse_text(emit_text(s)) == s

    def test_many_random_roundtrips(self):
        rng = random.Random(7)
        for _ in range(100):
            s = random_schedule(rng, with_jobs=True)
            assert parse_text(emit_text(s)) == s

    def test_emission_is_deterministic(self, rng):
        s = random_schedule(rng)
        assert emit_text(s) == emit_text(s)

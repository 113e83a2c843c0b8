"""Textual GOAL format.

Line-oriented grammar::

    num_ranks <N>
    rank <r> [job <j>] {
      <label>: calc <ns> [cpu <c>]
      <label>: send <bytes>b to <rank> [tag <t>] [cpu <c>] [nic <n>]
      <label>: recv <bytes>b from <rank> [tag <t>] [cpu <c>] [nic <n>]
      <labelA> requires <labelB>       # edge B -> A
    }

``#`` starts a comment; whitespace within a line is insignificant; braces
may share a line with other statements (``rank 0 { c0: calc 10 }``).
"""

from __future__ import annotations

import re
from typing import Optional

from .model import GoalSchedule, RankSchedule, ScheduleBuilder, Task, TaskKind


class GoalSyntaxError(ValueError):
    """Parse failure, carrying 1-based line and column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(r"[{}:]|[^\s{}:]+")


def _tokenize(text: str) -> list[list[tuple[str, int, int]]]:
    """Split into statements: token runs separated by newlines and braces.

    Braces become single-token statements so one-line rank blocks parse.
    """
    statements: list[list[tuple[str, int, int]]] = []
    current: list[tuple[str, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        for m in _TOKEN_RE.finditer(line):
            tok = m.group(0)
            col = m.start() + 1
            if tok in "{}":
                if current:
                    statements.append(current)
                    current = []
                statements.append([(tok, lineno, col)])
            else:
                current.append((tok, lineno, col))
        if current:
            statements.append(current)
            current = []
    return statements


def _int(tok: tuple[str, int, int], what: str) -> int:
    text, line, col = tok
    if not re.fullmatch(r"\d+", text):
        raise GoalSyntaxError(f"expected {what}, got {text!r}", line, col)
    return int(text)


def _bytes_field(tok: tuple[str, int, int]) -> int:
    text, line, col = tok
    m = re.fullmatch(r"(\d+)b", text)
    if not m:
        raise GoalSyntaxError(f"expected byte count like '8b', got {text!r}", line, col)
    return int(m.group(1))


_OPT_KEYS = {"tag", "cpu", "nic"}


def _parse_options(toks: list[tuple[str, int, int]], allowed: set[str]) -> dict[str, int]:
    opts: dict[str, int] = {}
    i = 0
    while i < len(toks):
        key, line, col = toks[i]
        if key not in allowed:
            raise GoalSyntaxError(f"unexpected token {key!r}", line, col)
        if key in opts:
            raise GoalSyntaxError(f"duplicate option {key!r}", line, col)
        if i + 1 >= len(toks):
            raise GoalSyntaxError(f"option {key!r} needs a value", line, col)
        opts[key] = _int(toks[i + 1], f"{key} value")
        i += 2
    return opts


def parse_text(text: str) -> GoalSchedule:
    """Parse GOAL source into a schedule.

    Labels resolve to task ids; cpu/nic/tag default to 0; duplicate labels
    within one rank are an error, as are unknown labels in ``requires``
    lines, out-of-range peers, and dependency cycles.
    """
    statements = _tokenize(text)
    pos = 0

    def peek() -> Optional[list[tuple[str, int, int]]]:
        return statements[pos] if pos < len(statements) else None

    stmt = peek()
    if stmt is None:
        raise GoalSyntaxError("empty input, expected 'num_ranks <N>'", 1, 1)
    if stmt[0][0] != "num_ranks" or len(stmt) != 2:
        raise GoalSyntaxError("expected 'num_ranks <N>'", stmt[0][1], stmt[0][2])
    num_ranks = _int(stmt[1], "rank count")
    if num_ranks < 1:
        raise GoalSyntaxError("num_ranks must be >= 1", stmt[1][1], stmt[1][2])
    pos += 1

    builder = ScheduleBuilder(num_ranks)
    seen_ranks: set[int] = set()

    while (stmt := peek()) is not None:
        head, line, col = stmt[0]
        if head != "rank" or len(stmt) not in (2, 4):
            raise GoalSyntaxError("expected 'rank <r> [job <j>] {'", line, col)
        rank = _int(stmt[1], "rank id")
        job_id = 0
        if len(stmt) == 4:
            if stmt[2][0] != "job":
                raise GoalSyntaxError(f"expected 'job', got {stmt[2][0]!r}", stmt[2][1], stmt[2][2])
            job_id = _int(stmt[3], "job id")
        if rank >= num_ranks:
            raise GoalSyntaxError(f"rank {rank} out of range [0, {num_ranks})", stmt[1][1], stmt[1][2])
        if rank in seen_ranks:
            raise GoalSyntaxError(f"duplicate block for rank {rank}", line, col)
        seen_ranks.add(rank)
        builder.set_job_id(rank, job_id)
        pos += 1

        stmt = peek()
        if stmt is None or stmt[0][0] != "{":
            l, c = (stmt[0][1], stmt[0][2]) if stmt else (line, col)
            raise GoalSyntaxError("expected '{' after rank header", l, c)
        pos += 1

        labels: dict[str, int] = {}
        pending_deps: list[tuple[str, str, int, int]] = []  # (after, before, line, col)

        while True:
            stmt = peek()
            if stmt is None:
                raise GoalSyntaxError(f"unterminated block for rank {rank}", line, col)
            if stmt[0][0] == "}":
                pos += 1
                break
            pos += 1
            _parse_rank_line(builder, rank, stmt, labels, pending_deps)

        for after, before, dline, dcol in pending_deps:
            if before not in labels:
                raise GoalSyntaxError(f"unknown label {before!r} in requires", dline, dcol)
            if after not in labels:
                raise GoalSyntaxError(f"unknown label {after!r} in requires", dline, dcol)
            builder.require(rank, labels[before], labels[after])

    missing = [r for r in range(num_ranks) if r not in seen_ranks]
    if missing:
        raise GoalSyntaxError(f"missing rank block(s): {missing}", 1, 1)

    schedule = builder.build()
    from .model import validate  # local import avoids cycle at module load
    report = validate(schedule)
    if report.cycles:
        rank, path = report.cycles[0]
        raise GoalSyntaxError(f"dependency cycle on rank {rank}: {'->'.join(map(str, path))}", 1, 1)
    if report.peer_out_of_range:
        rank, tid = report.peer_out_of_range[0]
        raise GoalSyntaxError(f"rank {rank} task {tid}: peer out of range", 1, 1)
    if report.self_sends:
        rank, tid = report.self_sends[0]
        raise GoalSyntaxError(f"rank {rank} task {tid}: peer equals own rank", 1, 1)
    return schedule


def _parse_rank_line(builder: ScheduleBuilder, rank: int,
                     stmt: list[tuple[str, int, int]],
                     labels: dict[str, int],
                     pending_deps: list[tuple[str, str, int, int]]) -> None:
    first, line, col = stmt[0]

    if len(stmt) >= 2 and stmt[1][0] == ":":
        label = first
        if label in labels:
            raise GoalSyntaxError(f"duplicate label {label!r} in rank {rank}", line, col)
        if len(stmt) < 3:
            raise GoalSyntaxError("expected task kind after ':'", line, col)
        kind, kline, kcol = stmt[2]
        rest = stmt[3:]
        if kind == "calc":
            if not rest:
                raise GoalSyntaxError("calc needs a duration", kline, kcol)
            dur = _int(rest[0], "duration in ns")
            opts = _parse_options(rest[1:], {"cpu"})
            tid = builder.calc(rank, dur, cpu=opts.get("cpu", 0), label=label)
        elif kind in ("send", "recv"):
            if len(rest) < 3:
                raise GoalSyntaxError(f"{kind} needs '<bytes>b {'to' if kind == 'send' else 'from'} <rank>'", kline, kcol)
            nbytes = _bytes_field(rest[0])
            keyword = "to" if kind == "send" else "from"
            if rest[1][0] != keyword:
                raise GoalSyntaxError(f"expected {keyword!r}, got {rest[1][0]!r}", rest[1][1], rest[1][2])
            peer = _int(rest[2], "peer rank")
            opts = _parse_options(rest[3:], _OPT_KEYS)
            if peer == rank:
                raise GoalSyntaxError(f"rank {rank}: peer equals own rank", rest[2][1], rest[2][2])
            fn = builder.send if kind == "send" else builder.recv
            tid = fn(rank, peer, nbytes, tag=opts.get("tag", 0),
                     cpu=opts.get("cpu", 0), nic=opts.get("nic", 0), label=label)
        else:
            raise GoalSyntaxError(f"unknown task kind {kind!r}", kline, kcol)
        labels[label] = tid
    elif len(stmt) == 3 and stmt[1][0] == "requires":
        # '<labelA> requires <labelB>' creates edge B -> A.
        pending_deps.append((first, stmt[2][0], line, col))
    else:
        raise GoalSyntaxError(f"cannot parse statement starting with {first!r}", line, col)


def emit_text(s: GoalSchedule) -> str:
    """Serialize deterministically: tasks by id, deps sorted.

    Output re-parses to an equal schedule (labels included; unlabeled
    tasks get ``t<id>``).
    """
    out: list[str] = [f"num_ranks {s.num_ranks}"]
    for r in s.ranks:
        header = f"rank {r.rank}" + (f" job {r.job_id}" if r.job_id else "")
        out.append(header + " {")
        names = {}
        for t in r.tasks:
            names[t.id] = t.label if t.label is not None else f"t{t.id}"
        for t in r.tasks:
            out.append("  " + _format_task(t, names[t.id]))
        for before, after in sorted(r.deps):
            out.append(f"  {names[after]} requires {names[before]}")
        out.append("}")
    return "\n".join(out) + "\n"


def _format_task(t: Task, name: str) -> str:
    if t.kind == TaskKind.CALC:
        line = f"{name}: calc {t.duration_ns}"
        if t.cpu:
            line += f" cpu {t.cpu}"
        return line
    verb, prep = ("send", "to") if t.kind == TaskKind.SEND else ("recv", "from")
    line = f"{name}: {verb} {t.bytes}b {prep} {t.peer}"
    if t.tag:
        line += f" tag {t.tag}"
    if t.cpu:
        line += f" cpu {t.cpu}"
    if t.nic:
        line += f" nic {t.nic}"
    return line

"""Locality audit over the transcripts of a distributed run."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .protocol import read_transcript

ALLOWED = {
    ("source", "alice"): {"hello", "ball", "sync", "end"},
    ("source", "bob"): {"hello", "ball", "sync", "end"},
    ("source", "collector"): {"hello", "manifest", "sync", "end"},
    ("alice", "collector"): {"hello", "result", "end"},
    ("bob", "collector"): {"hello", "result", "end"},
    # flow control travels back on the source's own connection
    ("collector", "source"): {"ack"},
}
REQUIRED = (
    ("source", "alice"),
    ("source", "bob"),
    ("source", "collector"),
    ("alice", "collector"),
    ("bob", "collector"),
)


@dataclass
class AuditVerdict:
    problems: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)  # (from, to) -> message count

    @property
    def passed(self) -> bool:
        return not self.problems

    def describe(self) -> str:
        if self.passed:
            return "PASS: " + ", ".join(f"{a}->{b} ({n})" for (a, b), n in sorted(self.edges.items()))
        return "FAIL: " + "; ".join(self.problems)


def _ball_problem(msg: dict):
    if set(msg) != {"type", "trial", "coord"}:
        extra = sorted(set(msg) - {"type", "trial"})
        return f"ball for trial {msg.get('trial')} carries {extra}, expected a single coord"
    if isinstance(msg["coord"], (list, tuple, dict)):
        return f"ball for trial {msg.get('trial')} carries a compound coordinate"
    return None


def audit_run(transcripts) -> AuditVerdict:
    """Check the message graph of a run.

    ``transcripts`` maps role -> list of transcript entries or a path to a
    transcript file. The verdict passes iff every observed message travels an
    allowed edge with an allowed type, each of the five data edges is used,
    and every ball carries exactly one coordinate.
    """
    verdict = AuditVerdict()
    seen_problems = set()

    def flag(text):
        if text not in seen_problems:
            seen_problems.add(text)
            verdict.problems.append(text)

    for role, entries in transcripts.items():
        if isinstance(entries, (str, Path)):
            entries = read_transcript(entries)
        for e in entries:
            edge = (e.get("from"), e.get("to"))
            if role not in edge:
                flag(f"{role} transcript records a message it was not party to: {edge[0]}->{edge[1]}")
            msg = e.get("msg") or {}
            kind = msg.get("type")
            if edge not in ALLOWED:
                flag(f"forbidden edge {edge[0]}->{edge[1]} ({kind})")
                continue
            if e.get("dir") == "send":
                verdict.edges[edge] = verdict.edges.get(edge, 0) + 1
            if kind not in ALLOWED[edge]:
                flag(f"message type {kind!r} not allowed on {edge[0]}->{edge[1]}")
            if kind == "ball":
                problem = _ball_problem(msg)
                if problem:
                    flag(f"{edge[0]}->{edge[1]}: {problem}")
    for edge in REQUIRED:
        if edge not in verdict.edges:
            flag(f"expected edge {edge[0]}->{edge[1]} never used")
    return verdict

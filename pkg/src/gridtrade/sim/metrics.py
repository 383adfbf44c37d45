"""Run metrics: counters, per-backbone load, and scenario verdicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        detail = f" ({self.detail})" if self.detail else ""
        return f"[{mark}] {self.name}{detail}"


@dataclass
class Metrics:
    """Counters any run accumulates plus end-of-run verdicts."""

    counters: Dict[str, int] = field(default_factory=dict)
    per_backbone_load: Dict[str, int] = field(default_factory=dict)
    verdicts: List[Verdict] = field(default_factory=list)
    notes: Dict[str, str] = field(default_factory=dict)

    def bump(self, name: str, by: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + by

    def get(self, name: str) -> int:
        return self.counters.get(name, 0)

    def note(self, key: str, value) -> None:
        self.notes[key] = str(value)

    def add_verdict(self, name: str, passed: bool, detail: str = "") -> Verdict:
        verdict = Verdict(name=name, passed=bool(passed), detail=detail)
        self.verdicts.append(verdict)
        return verdict

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    # -- rendering ----------------------------------------------------------

    def render_text(self) -> str:
        lines = ["== counters =="]
        for name in sorted(self.counters):
            lines.append(f"{name:32s} {self.counters[name]}")
        if self.per_backbone_load:
            lines.append("== backbone load ==")
            for node in sorted(self.per_backbone_load):
                lines.append(f"{node:32s} {self.per_backbone_load[node]}")
        if self.notes:
            lines.append("== notes ==")
            for key in sorted(self.notes):
                lines.append(f"{key:32s} {self.notes[key]}")
        lines.append("== verdicts ==")
        for verdict in self.verdicts:
            lines.append(verdict.line())
        lines.append(f"result: {'PASS' if self.all_passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def render_kv(self) -> str:
        """Machine-readable key=value lines, deterministically ordered."""
        lines = []
        for name in sorted(self.counters):
            lines.append(f"counter.{name}={self.counters[name]}")
        for node in sorted(self.per_backbone_load):
            lines.append(f"load.{node}={self.per_backbone_load[node]}")
        for key in sorted(self.notes):
            lines.append(f"note.{key}={self.notes[key]}")
        for verdict in self.verdicts:
            lines.append(f"verdict.{verdict.name}={'pass' if verdict.passed else 'fail'}")
        lines.append(f"result={'pass' if self.all_passed else 'fail'}")
        return "\n".join(lines) + "\n"

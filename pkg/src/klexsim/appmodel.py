"""Application side of the exclusion interface: requests and critical sections.

The application owns the Out -> Req transition (a workload event arms a
request); the protocol owns Req -> In (enough tokens reserved) and
In -> Out (critical section finished).  Critical-section time is measured
in scheduler steps so runs are deterministic; an infinite duration pins a
process in its critical section, which is how liveness scenarios hold
resource units forever.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .protocol import OUT, REQ, ProcessState

INF = math.inf


class ScenarioError(ValueError):
    """A workload description is malformed or events overlap."""


@dataclass(frozen=True)
class WorkloadEvent:
    at_step: int
    process: str
    need: int
    duration: float  # whole steps, or math.inf to pin the process in its CS

    def check(self, k: int) -> None:
        if self.at_step < 0:
            raise ScenarioError(f"event for {self.process!r}: negative step")
        if not 1 <= self.need <= k:
            raise ScenarioError(
                f"event for {self.process!r} at step {self.at_step}: "
                f"need {self.need} outside 1..{k}"
            )
        if self.duration != INF and (self.duration < 1 or int(self.duration) != self.duration):
            raise ScenarioError(
                f"event for {self.process!r} at step {self.at_step}: "
                f"duration must be a positive step count or inf"
            )


class Workload:
    """A static request schedule, usually parsed from a scenario file."""

    def __init__(self, events: list[WorkloadEvent], k: int):
        for ev in events:
            ev.check(k)
        by_proc: dict[str, int] = {}
        for ev in sorted(events, key=lambda e: e.at_step):
            if ev.process in by_proc and by_proc[ev.process] == ev.at_step:
                raise ScenarioError(
                    f"two events for {ev.process!r} at step {ev.at_step}"
                )
            by_proc[ev.process] = ev.at_step
        self.events = sorted(events, key=lambda e: (e.at_step, e.process))
        self._cursor = 0

    def due(self, step: int, states: dict[str, ProcessState] | None = None
            ) -> list[WorkloadEvent]:
        out = []
        while self._cursor < len(self.events) and self.events[self._cursor].at_step <= step:
            out.append(self.events[self._cursor])
            self._cursor += 1
        return out

    def exhausted(self, step: int) -> bool:
        return self._cursor >= len(self.events)

    def reset(self) -> None:
        self._cursor = 0


class RandomWorkload:
    """Seeded request generator for convergence and fairness campaigns.

    Each step, every idle process issues a request with probability
    ``rate``; need is uniform in 1..k and duration uniform in
    1..max_duration.  Stops issuing after ``last_step`` so a run can
    drain.
    """

    def __init__(self, processes: list[str], k: int, seed: int,
                 rate: float = 0.05, max_duration: int = 10,
                 last_step: int | None = None):
        self.processes = list(processes)
        self.k = k
        self.rate = rate
        self.max_duration = max_duration
        self.last_step = last_step
        self._rng = random.Random(seed)

    def due(self, step: int, states: dict[str, ProcessState]) -> list[WorkloadEvent]:
        if self.last_step is not None and step > self.last_step:
            return []
        out = []
        for pid in self.processes:
            if states[pid].state != OUT:
                continue
            if self._rng.random() < self.rate:
                out.append(WorkloadEvent(
                    at_step=step,
                    process=pid,
                    need=self._rng.randint(1, self.k),
                    duration=self._rng.randint(1, self.max_duration),
                ))
        return out

    def exhausted(self, step: int) -> bool:
        return self.last_step is not None and step > self.last_step


class RepeatingWorkload:
    """Processes that re-request fixed amounts whenever they are idle.

    Deterministic and reactive: at each step every listed process that is
    back to Out immediately arms its request again.  This is the workload
    shape of repeated-contention scenarios.
    """

    def __init__(self, specs: dict[str, tuple[int, float]], k: int):
        for pid, (need, duration) in specs.items():
            WorkloadEvent(0, pid, need, duration).check(k)
        self.specs = dict(specs)
        self.processes = list(specs)

    def due(self, step: int, states: dict[str, ProcessState]) -> list[WorkloadEvent]:
        out = []
        for pid, (need, duration) in self.specs.items():
            if states[pid].state == OUT:
                out.append(WorkloadEvent(step, pid, need, duration))
        return out

    def exhausted(self, step: int) -> bool:
        return False


@dataclass
class AppState:
    """Per-process critical-section bookkeeping.

    ``remaining`` is the live countdown: positive exactly while the process
    is in its critical section.  ``armed_duration`` holds the duration of
    the pending request, consumed when the protocol grants entry.  Entries
    with no armed request (possible from an arbitrary initial state) run
    for ``default_duration`` steps so they always terminate.
    """

    remaining: dict[str, float] = field(default_factory=dict)
    armed_duration: dict[str, float] = field(default_factory=dict)
    default_duration: int = 1

    def enter_cs(self, pid: str) -> None:
        self.remaining[pid] = self.armed_duration.pop(pid, self.default_duration)

    def release_cs(self, pid: str) -> bool:
        return self.remaining.get(pid, 0) == 0

    def tick(self) -> list[str]:
        """Advance every running critical section one step; return the
        processes whose section just finished."""
        done = []
        for pid, left in self.remaining.items():
            if left == INF or left <= 0:
                continue
            self.remaining[pid] = left - 1
            if left - 1 == 0:
                done.append(pid)
        return done


def apply_workload(events: list[WorkloadEvent], app: AppState,
                   states: dict[str, ProcessState]) -> list[str]:
    """Fire due request events: Out -> Req with the requested need.

    A request landing on a non-idle process means the scenario overlaps
    itself, which is a scenario defect, not a protocol fault.
    """
    fired = []
    for ev in events:
        st = states[ev.process]
        if st.state != OUT:
            raise ScenarioError(
                f"request for {ev.process!r} at step {ev.at_step} "
                f"while its state is {st.state}"
            )
        st.state = REQ
        st.need = ev.need
        app.armed_duration[ev.process] = ev.duration
        fired.append(ev.process)
    return fired


def parse_scenario(text: str, k: int) -> Workload:
    """Parse a scenario file: one ``req <step> <process> <need> <duration|inf>``
    per line; blank lines and ``#`` comments allowed."""
    events = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5 or parts[0] != "req":
            raise ScenarioError(f"line {lineno}: expected 'req <step> <process> <need> <duration|inf>'")
        try:
            step = int(parts[1])
            need = int(parts[3])
            duration = INF if parts[4] == "inf" else float(int(parts[4]))
        except ValueError:
            raise ScenarioError(f"line {lineno}: bad number in {line!r}") from None
        events.append(WorkloadEvent(step, parts[2], need, duration))
    return Workload(events, k)

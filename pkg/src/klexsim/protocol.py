"""Per-process state machines for k-out-of-l exclusion on an oriented tree.

Four token species circulate on the virtual ring:

* resource tokens (ResT), one per resource unit, reserved into RSet by
  requesters;
* the pusher (PushT), which forces a non-enabled, non-prioritized process to
  release its reserved tokens, preventing deadlock;
* the priority token (PrioT), which shields one unsatisfied requester from
  the pusher, preventing livelock;
* the controller (Ctrl), a root-driven token that counts the other species
  once per ring traversal and triggers replenishment or a network reset.

Handlers are total: they accept any state within the declared variable
domains and never raise, which is what makes arbitrary-fault starts safe
to execute.  Each handler mutates the given state in place and returns the
ordered sends it produced; send order is load-bearing because channels are
FIFO.

Note on the pusher guard: the release condition requires that the process
does NOT hold the priority token (prio is None).  A priority holder keeps
its reserved tokens when pushed and only retransmits the pusher; this is
what makes the priority token cancel the pusher's effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

REQ = "Req"
IN = "In"
OUT = "Out"


# --------------------------------------------------------------------------
# Wire messages
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResT:
    """One resource unit.  ``uid`` is a monitor-only identity tag: it is
    excluded from equality and never consulted by handler logic."""

    uid: int = field(default=-1, compare=False)

    def __str__(self) -> str:
        return "ResT"


@dataclass(frozen=True)
class PushT:
    def __str__(self) -> str:
        return "PushT"


@dataclass(frozen=True)
class PrioT:
    def __str__(self) -> str:
        return "PrioT"


@dataclass(frozen=True)
class Ctrl:
    c: int
    r: bool
    pt: int
    ppr: int

    def __str__(self) -> str:
        return f"Ctrl{{c={self.c},r={int(self.r)},pt={self.pt},ppr={self.ppr}}}"


Message = Union[ResT, PushT, PrioT, Ctrl]


# --------------------------------------------------------------------------
# Process state
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Reserved:
    """An entry of RSet: the arrival channel of a reserved resource token,
    plus its monitor-only identity."""

    channel: int
    uid: int = -1


@dataclass
class ProcessState:
    """All protocol variables of one process.

    The s* counters and ``reset`` are root-only; they stay inert on
    non-root processes.
    """

    myc: int = 0
    succ: int = 0
    rset: list[Reserved] = field(default_factory=list)
    need: int = 0
    state: str = OUT
    prio: int | None = None
    # root only
    stoken: int = 0
    spush: int = 0
    sprio: int = 0
    reset: bool = False

    def rset_count(self, channel: int) -> int:
        """Multiplicity of ``channel`` in the RSet multiset."""
        return sum(1 for e in self.rset if e.channel == channel)


@dataclass(frozen=True)
class ProcParams:
    """Static per-process facts the handlers need."""

    is_root: bool
    delta: int  # number of channels at this process
    k: int
    ell: int
    counter_modulus: int  # myc domain size, 2(n-1)(C_MAX+1)+1


@dataclass(frozen=True)
class TraversalEnd:
    """Root-side record of one completed controller traversal."""

    res_total: int  # PT + SToken at the wrap, before zeroing
    prio_total: int  # PPr + SPrio
    push_total: int  # SPush
    arriving_r: bool  # reset flag of the traversal that just ended
    new_reset: bool  # reset decision for the traversal about to start


@dataclass
class HandlerOutput:
    state: ProcessState
    sends: list[tuple[int, Message]] = field(default_factory=list)
    entered_cs: bool = False
    restart_timer: bool = False
    traversal_end: TraversalEnd | None = None


def _nxt(channel: int, delta: int) -> int:
    return (channel + 1) % delta


# --------------------------------------------------------------------------
# Message handlers
# --------------------------------------------------------------------------

def handle_res_t(st: ProcessState, q: int, msg: ResT, p: ProcParams) -> HandlerOutput:
    """Receive a resource token on channel q.

    A requester short of its need reserves the token; anyone else forwards
    it along the ring.  A root in reset mode silently consumes it.
    """
    out = HandlerOutput(st)
    if p.is_root and st.reset:
        return out
    if st.state == REQ and len(st.rset) < st.need:
        st.rset.append(Reserved(q, msg.uid))
    else:
        if p.is_root and q == p.delta - 1:
            st.stoken = min(st.stoken + 1, p.ell + 1)
        out.sends.append((_nxt(q, p.delta), msg))
    return out


def handle_push_t(st: ProcessState, q: int, msg: PushT, p: ProcParams) -> HandlerOutput:
    """Receive the pusher on channel q.

    Releases every reserved token unless the process is in its critical
    section, enabled to enter it, or holds the priority token.  The pusher
    itself is always forwarded (root in reset mode consumes it instead).
    """
    out = HandlerOutput(st)
    if p.is_root and st.reset:
        return out
    enabled = st.state == REQ and len(st.rset) >= st.need
    if st.prio is None and not enabled and st.state != IN:
        for e in st.rset:
            if p.is_root and e.channel == p.delta - 1:
                st.stoken = min(st.stoken + 1, p.ell + 1)
            out.sends.append((_nxt(e.channel, p.delta), ResT(uid=e.uid)))
        st.rset.clear()
    if p.is_root and q == p.delta - 1:
        st.spush = min(st.spush + 1, 2)
    out.sends.append((_nxt(q, p.delta), msg))
    return out


def handle_prio_t(st: ProcessState, q: int, msg: PrioT, p: ProcParams) -> HandlerOutput:
    """Receive the priority token on channel q: hold it if free, else forward."""
    out = HandlerOutput(st)
    if p.is_root and st.reset:
        return out
    if st.prio is None:
        st.prio = q
    else:
        out.sends.append((_nxt(q, p.delta), msg))
    return out


def handle_ctrl(st: ProcessState, q: int, msg: Ctrl, p: ProcParams) -> HandlerOutput:
    if p.is_root:
        return handle_ctrl_root(st, q, msg, p)
    return handle_ctrl_nonroot(st, q, msg, p)


def handle_ctrl_root(st: ProcessState, q: int, msg: Ctrl, p: ProcParams) -> HandlerOutput:
    """Root reception of a controller message.

    Valid only when it arrives from Succ carrying the root's own counter;
    anything else is dropped.  When Succ wraps to 0 a traversal has
    completed: the root decides whether to reset (too many of some species)
    or to mint the missing tokens, then stamps and relaunches the
    controller.
    """
    out = HandlerOutput(st)
    if q != st.succ or msg.c != st.myc:
        return out  # invalid: ignored entirely, no retransmission
    st.succ = _nxt(st.succ, p.delta)
    pt, ppr = msg.pt, msg.ppr
    if st.succ == 0:
        res_total = pt + st.stoken
        prio_total = ppr + st.sprio
        push_total = st.spush
        st.myc = (st.myc + 1) % p.counter_modulus
        st.reset = res_total > p.ell or prio_total > 1 or push_total > 1
        out.traversal_end = TraversalEnd(
            res_total, prio_total, push_total, arriving_r=msg.r, new_reset=st.reset
        )
        if st.reset:
            st.rset.clear()
            st.prio = None
        else:
            if prio_total < 1:
                out.sends.append((0, PrioT()))
            while pt + st.stoken < p.ell:
                out.sends.append((0, ResT()))
                st.stoken = min(st.stoken + 1, p.ell + 1)
            if st.spush < 1:
                out.sends.append((0, PushT()))
        st.stoken = 0
        st.sprio = 0
        st.spush = 0
        pt = 0
        ppr = 0
    pt = min(pt + st.rset_count(q), p.ell + 1)
    if st.prio == q:
        ppr = min(ppr + 1, 2)
    out.sends.append((st.succ, Ctrl(st.myc, st.reset, pt, ppr)))
    out.restart_timer = True
    return out


def handle_ctrl_nonroot(st: ProcessState, q: int, msg: Ctrl, p: ProcParams) -> HandlerOutput:
    """Non-root reception of a controller message.

    Progresses the traversal when the message returns from Succ with the
    adopted counter; adopts a new counter arriving from the parent; a
    parent message carrying the already-adopted counter is a duplicate and
    is retransmitted without touching the traversal state (dropping it
    could deadlock the ring).  Everything else is dropped.
    """
    out = HandlerOutput(st)
    ok = False
    if q == st.succ and msg.c == st.myc and st.succ != 0:
        st.succ = _nxt(st.succ, p.delta)
        ok = True
        if msg.r:
            st.rset.clear()
            st.prio = None
    if q == 0:
        ok = True
        if msg.c != st.myc:
            st.succ = min(1, p.delta - 1)
            if msg.r:
                st.rset.clear()
                st.prio = None
        st.myc = msg.c
    if ok:
        pt = min(msg.pt + st.rset_count(q), p.ell + 1)
        ppr = min(msg.ppr + 1, 2) if st.prio == q else msg.ppr
        out.sends.append((st.succ, Ctrl(st.myc, msg.r, pt, ppr)))
    return out


# --------------------------------------------------------------------------
# Local actions and the root timeout
# --------------------------------------------------------------------------

def local_actions(
    st: ProcessState,
    p: ProcParams,
    enter_cs: Callable[[], None] = lambda: None,
    release_cs: Callable[[], bool] = lambda: False,
) -> HandlerOutput:
    """The guard/action block run after every handled message and whenever
    the application side changes.

    In order: enter the critical section once enough tokens are reserved;
    release all tokens when the critical section finishes; pass the
    priority token on unless an unsatisfied request justifies keeping it.
    ``release_cs`` is consulted after a potential entry, so a freshly
    granted critical section is never released in the same pass.
    """
    out = HandlerOutput(st)
    if st.state == REQ and len(st.rset) >= st.need:
        st.state = IN
        out.entered_cs = True
        enter_cs()
    if st.state == IN and release_cs():
        for e in st.rset:
            if p.is_root and e.channel == p.delta - 1:
                st.stoken = min(st.stoken + 1, p.ell + 1)
            out.sends.append((_nxt(e.channel, p.delta), ResT(uid=e.uid)))
        st.rset.clear()
        st.state = OUT
    if st.prio is not None and (st.state != REQ or len(st.rset) >= st.need):
        if p.is_root and st.prio == p.delta - 1:
            st.sprio = min(st.sprio + 1, 2)
        out.sends.append((_nxt(st.prio, p.delta), PrioT()))
        st.prio = None
    return out


def on_timeout_root(st: ProcessState, p: ProcParams) -> HandlerOutput:
    """Root timeout: retransmit a controller with zeroed counts toward Succ."""
    out = HandlerOutput(st)
    out.sends.append((st.succ, Ctrl(st.myc, st.reset, 0, 0)))
    out.restart_timer = True
    return out


def counter_modulus(n: int, cmax: int) -> int:
    """Size of the traversal counter domain [0 .. 2(n-1)(C_MAX+1)]."""
    return 2 * (n - 1) * (cmax + 1) + 1


def dispatch(st: ProcessState, q: int, msg: Message, p: ProcParams) -> HandlerOutput:
    if isinstance(msg, ResT):
        return handle_res_t(st, q, msg, p)
    if isinstance(msg, PushT):
        return handle_push_t(st, q, msg, p)
    if isinstance(msg, PrioT):
        return handle_prio_t(st, q, msg, p)
    return handle_ctrl(st, q, msg, p)

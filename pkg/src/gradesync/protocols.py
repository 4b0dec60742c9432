"""Synchronization protocol state machines.

Two rate-correcting flooding protocols over the same message format:

* ``grades`` — treats the squared sync error as a loss and descends its
  gradient: with error e and per-round gradient 2 * beacon_period *
  nominal_freq * e, the rate multiplier moves by -step * gradient.
* ``pisync`` — a proportional-integral controller: the offset jump is the
  proportional part and the rate multiplier moves by -step * e directly.

Both protocols, on an accepted message, first jump the logical value onto the
received clock (offset correction), then update the rate multiplier.  A
message is accepted only if it carries a strictly newer sequence number,
which makes re-delivered or out-of-order floods harmless.

All transition functions are pure: they take a state and return a new one,
leaving the input untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .clocks import LogicalClock
from .errors import ContractViolation

GRADES = "grades"
PISYNC = "pisync"
PROTOCOLS = (GRADES, PISYNC)


def step_size_limit(protocol: str, beacon_period: float, nominal_freq: float) -> float:
    """Largest stable step size for a protocol at the given round geometry.

    grades: 1 / (beacon_period * nominal_freq)**2
    pisync: 2 / (beacon_period * nominal_freq)
    """
    bf = beacon_period * nominal_freq
    if protocol == GRADES:
        return 1.0 / (bf * bf)
    if protocol == PISYNC:
        return 2.0 / bf
    raise ValueError(f"unknown protocol: {protocol!r}")


@dataclass(frozen=True)
class GradesState:
    step_size: float
    prev_gradient: float = 0.0
    seq: int = 0
    clock: LogicalClock = LogicalClock()


@dataclass(frozen=True)
class PisyncState:
    step_size: float
    prev_error: float = 0.0
    seq: int = 0
    clock: LogicalClock = LogicalClock()


@dataclass(frozen=True)
class SyncMessage:
    """One broadcast: sender id, flood sequence number, clock payload(s).

    In dual-protocol runs a single physical message carries both protocols'
    logical readings; a disabled protocol's field is None.
    """

    sender: int
    seq: int
    grades_clock: float | None = None
    pisync_clock: float | None = None


def compute_error(local_read: float, received_clock: float) -> float:
    """Sync error: local logical reading minus received clock value.

    Channel noise is already embedded in ``received_clock`` by the transport.
    """
    return local_read - received_clock


def error_gradient(error: float, beacon_period: float, nominal_freq: float) -> float:
    """Per-round gradient of the squared sync error w.r.t. the rate multiplier."""
    return 2.0 * beacon_period * nominal_freq * error


def adapt_step(step: float, signal_now: float, signal_prev: float, step_max: float) -> float:
    """Sign-agreement step adaptation.

    Consecutive update signals with the same sign mean we are still far from
    the optimum: double the step.  A sign flip (or a zero, including the very
    first update) means overshoot: divide by three.  The result is clamped to
    ``step_max``; if the shrink underflows to exactly zero the previous step
    is kept.
    """
    grown = 2.0 * step if signal_now * signal_prev > 0 else step / 3.0
    if grown > step_max:
        grown = step_max
    if grown == 0.0:
        grown = step
    return grown


def grades_on_message(
    state: GradesState,
    msg: SyncMessage,
    hw_now: float,
    beacon_period: float,
    nominal_freq: float,
    adapt: bool = True,
) -> GradesState:
    """Process a received flood message; stale sequence numbers are a no-op."""
    if msg.seq <= state.seq:
        return state
    error = compute_error(state.clock.read(hw_now), msg.grades_clock)
    clock = state.clock.with_offset(msg.grades_clock, hw_now)
    gradient = error_gradient(error, beacon_period, nominal_freq)
    step = state.step_size
    if adapt:
        step = adapt_step(
            step, gradient, state.prev_gradient, step_size_limit(GRADES, beacon_period, nominal_freq)
        )
    rate = clock.rate_multiplier - step * gradient
    if rate <= 0:
        raise ContractViolation(
            f"rate multiplier driven to {rate} (step size {step} is mis-scaled for "
            f"beacon_period={beacon_period}, nominal_freq={nominal_freq})"
        )
    return GradesState(
        step_size=step,
        prev_gradient=gradient,
        seq=msg.seq,
        clock=clock.with_rate(rate),
    )


def pisync_on_message(
    state: PisyncState,
    msg: SyncMessage,
    hw_now: float,
    beacon_period: float,
    nominal_freq: float,
    adapt: bool = True,
) -> PisyncState:
    """PI-controller counterpart of :func:`grades_on_message`."""
    if msg.seq <= state.seq:
        return state
    error = compute_error(state.clock.read(hw_now), msg.pisync_clock)
    clock = state.clock.with_offset(msg.pisync_clock, hw_now)
    step = state.step_size
    if adapt:
        step = adapt_step(
            step, error, state.prev_error, step_size_limit(PISYNC, beacon_period, nominal_freq)
        )
    rate = clock.rate_multiplier - step * error
    if rate <= 0:
        raise ContractViolation(
            f"rate multiplier driven to {rate} (step size {step} is mis-scaled for "
            f"beacon_period={beacon_period}, nominal_freq={nominal_freq})"
        )
    return PisyncState(
        step_size=step,
        prev_error=error,
        seq=msg.seq,
        clock=clock.with_rate(rate),
    )


def on_beacon_tick(
    grades: GradesState | None,
    pisync: PisyncState | None,
    *,
    sender: int,
    is_reference: bool,
    hw_now: float,
) -> tuple[GradesState | None, PisyncState | None, SyncMessage]:
    """Emit a broadcast when a node's hardware clock crosses a round boundary.

    The reference node increments the flood sequence number before emitting
    and always advertises its raw hardware reading (its logical clock is its
    hardware clock; it never corrects itself).  Everyone else re-broadcasts
    its current logical reading under its current sequence number.
    """
    seqs = {s.seq for s in (grades, pisync) if s is not None}
    if len(seqs) != 1:
        raise ContractViolation(f"protocol states disagree on sequence number: {sorted(seqs)}")
    seq = seqs.pop()
    if is_reference:
        seq += 1
        grades = replace(grades, seq=seq) if grades is not None else None
        pisync = replace(pisync, seq=seq) if pisync is not None else None
        grades_val = hw_now if grades is not None else None
        pisync_val = hw_now if pisync is not None else None
    else:
        grades_val = grades.clock.read(hw_now) if grades is not None else None
        pisync_val = pisync.clock.read(hw_now) if pisync is not None else None
    msg = SyncMessage(sender=sender, seq=seq, grades_clock=grades_val, pisync_clock=pisync_val)
    return grades, pisync, msg

"""Clock and channel-noise primitives.

A hardware clock accumulates ticks at an instantaneous frequency
``nominal_freq + deviation(t)`` where the deviation is produced by a drift
model and is bounded by ``max_deviation < nominal_freq`` (so trajectories are
strictly increasing).  A logical clock maps hardware ticks to an estimate of
global time through an offset and a rate multiplier, and is only ever updated
at discrete sync events.

Drift models come in two flavors:

* trajectory models (:class:`ConstantDrift`, :class:`PiecewiseDrift`,
  :class:`WhiteDrift` in ``"segments"`` mode) define an instantaneous rate at
  every instant.  They integrate exactly over any interval and can be
  inverted to find the real time at which a tick target is crossed, which is
  what the event simulator needs to schedule beacons.
* the :class:`WhiteDrift` ``"interval"`` mode samples the deviation integral
  of the white model directly as Normal(0, dt * max_deviation**2 / 3).  That
  is the CLT view of per-unit-time uniform deviations; it is meant for
  interval-level Monte-Carlo work and has no trajectory to invert.

All randomness flows through numpy ``Generator`` objects injected at
construction, so a (seed, config) pair fully determines every trajectory.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation

_SEGMENT_CHUNK = 256


@dataclass(frozen=True)
class ConstantDrift:
    """Fixed frequency deviation: f(t) = nominal + deviation forever."""

    deviation: float = 0.0

    def deviation_rate(self, t: float) -> float:
        return self.deviation

    def deviation_integral(self, t0: float, t1: float) -> float:
        return self.deviation * (t1 - t0)

    def pieces(self, t_from: float):
        yield t_from, math.inf, self.deviation

    def max_abs_deviation(self) -> float:
        return abs(self.deviation)


@dataclass(frozen=True)
class PiecewiseDrift:
    """Step-function deviation given as ((start_time, deviation), ...).

    The first start time must be 0 so the whole axis is covered; start times
    must be strictly increasing.
    """

    steps: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.steps or self.steps[0][0] != 0.0:
            raise ValueError("drift schedule must start at time 0")
        starts = [s for s, _ in self.steps]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("drift schedule start times must be increasing")

    def _index(self, t: float) -> int:
        starts = [s for s, _ in self.steps]
        return max(bisect_right(starts, t) - 1, 0)

    def deviation_rate(self, t: float) -> float:
        return self.steps[self._index(t)][1]

    def deviation_integral(self, t0: float, t1: float) -> float:
        total = 0.0
        for start, end, dev in self.pieces(t0):
            if start >= t1:
                break
            total += dev * (min(end, t1) - start)
        return total

    def pieces(self, t_from: float):
        i = self._index(t_from)
        while i < len(self.steps):
            start = max(self.steps[i][0], t_from)
            end = self.steps[i + 1][0] if i + 1 < len(self.steps) else math.inf
            yield start, end, self.steps[i][1]
            i += 1

    def max_abs_deviation(self) -> float:
        return max(abs(d) for _, d in self.steps)


class WhiteDrift:
    """Per-unit-time white frequency deviation, uniform in [-max_dev, +max_dev].

    mode="interval": deviation integrals are drawn as
    Normal(0, dt * max_dev**2 / 3), the CLT limit of summing unit-time
    uniforms.  No instantaneous trajectory exists in this mode.

    mode="segments": an explicit realization — one uniform draw per unit-time
    segment [j, j+1), drawn lazily in segment order so the realization does
    not depend on the query pattern.  Integrals are exact sums and the
    trajectory can be inverted for tick-crossing times.
    """

    def __init__(self, max_deviation: float, rng: np.random.Generator, mode: str = "interval"):
        if mode not in ("interval", "segments"):
            raise ValueError(f"unknown white drift mode: {mode!r}")
        if max_deviation < 0:
            raise ValueError("max_deviation must be non-negative")
        self.max_deviation = float(max_deviation)
        self.mode = mode
        self._rng = rng
        self._segments: list[float] = []

    def _segment(self, j: int) -> float:
        while len(self._segments) <= j:
            draws = self._rng.uniform(-self.max_deviation, self.max_deviation, _SEGMENT_CHUNK)
            self._segments.extend(draws.tolist())
        return self._segments[j]

    def deviation_rate(self, t: float) -> float:
        if self.mode != "segments":
            raise ValueError("interval-mode white drift has no instantaneous rate")
        if t < 0:
            raise ValueError("white drift is defined for t >= 0")
        return self._segment(int(math.floor(t)))

    def deviation_integral(self, t0: float, t1: float) -> float:
        if self.mode == "interval":
            scale = self.max_deviation * math.sqrt((t1 - t0) / 3.0)
            return float(self._rng.normal(0.0, scale)) if scale > 0 else 0.0
        total = 0.0
        for start, end, dev in self.pieces(t0):
            if start >= t1:
                break
            total += dev * (min(end, t1) - start)
        return total

    def pieces(self, t_from: float):
        if self.mode != "segments":
            raise ValueError("interval-mode white drift has no trajectory pieces")
        j = int(math.floor(t_from))
        while True:
            yield max(float(j), t_from), float(j + 1), self._segment(j)
            j += 1

    def max_abs_deviation(self) -> float:
        return self.max_deviation


class HardwareClock:
    """Free-running oscillator counting ticks of a drifting frequency.

    The clock keeps (real time, accumulated ticks) state and is advanced
    monotonically.  ``time_of_tick`` projects forward along the drift
    trajectory without committing state, which is safe because trajectory
    realizations are fixed once drawn.
    """

    def __init__(
        self,
        nominal_freq: float = 1e6,
        max_deviation: float | None = None,
        drift=None,
        start_ticks: float = 0.0,
        quantize: bool = False,
    ):
        if nominal_freq <= 0:
            raise ValueError("nominal_freq must be positive")
        if max_deviation is None:
            max_deviation = 100e-6 * nominal_freq  # 100 ppm default tolerance
        if not 0 <= max_deviation < nominal_freq:
            raise ValueError("need 0 <= max_deviation < nominal_freq")
        drift = drift if drift is not None else ConstantDrift(0.0)
        if drift.max_abs_deviation() > max_deviation * (1 + 1e-12):
            raise ValueError("drift model exceeds the clock's max_deviation bound")
        self.nominal_freq = float(nominal_freq)
        self.max_deviation = float(max_deviation)
        self.drift = drift
        self.quantize = bool(quantize)
        self._time = 0.0
        self._ticks = float(start_ticks)

    @property
    def time(self) -> float:
        return self._time

    def read(self) -> float:
        """Current tick count (floored to a whole tick in quantize mode)."""
        return math.floor(self._ticks) if self.quantize else self._ticks

    def advance(self, real_dt: float) -> float:
        """Advance real time by ``real_dt`` and return the ticks elapsed."""
        if real_dt < 0:
            raise ContractViolation(f"cannot advance a clock backwards (dt={real_dt})")
        if real_dt == 0:
            return 0.0
        elapsed = self.nominal_freq * real_dt + self.drift.deviation_integral(
            self._time, self._time + real_dt
        )
        self._time += real_dt
        self._ticks += elapsed
        return elapsed

    def advance_to(self, t: float) -> None:
        if t < self._time:
            raise ContractViolation(f"clock already at t={self._time}, cannot go back to {t}")
        if t > self._time:
            self.advance(t - self._time)

    def time_of_tick(self, target_ticks: float) -> float:
        """Real time at which the accumulated tick count reaches ``target_ticks``.

        Requires a trajectory drift model.  Does not advance the clock.
        """
        if target_ticks < self._ticks:
            raise ContractViolation("tick target is already in the past")
        remaining = target_ticks - self._ticks
        for start, end, dev in self.drift.pieces(self._time):
            rate = self.nominal_freq + dev
            if end == math.inf:
                return start + remaining / rate
            span = (end - start) * rate
            if span >= remaining:
                return start + remaining / rate
            remaining -= span
        raise RuntimeError("unreachable: drift pieces are exhaustive")


@dataclass(frozen=True)
class LogicalClock:
    """Piecewise-linear map from hardware ticks to estimated global time.

    Between updates the logical value advances as
    ``value_at_update + rate_multiplier * (hw_now - hw_at_update)``.
    """

    value_at_update: float = 0.0
    rate_multiplier: float = 1.0
    hw_at_update: float = 0.0

    def __post_init__(self):
        if self.rate_multiplier <= 0:
            raise ValueError("rate_multiplier must stay positive")

    def read(self, hw_now: float) -> float:
        if hw_now < self.hw_at_update:
            raise ContractViolation(
                f"logical read at hw={hw_now} before last update hw={self.hw_at_update}"
            )
        return self.value_at_update + self.rate_multiplier * (hw_now - self.hw_at_update)

    def with_offset(self, new_value: float, hw_now: float) -> "LogicalClock":
        """Jump the value to ``new_value`` at hardware time ``hw_now`` (rate unchanged)."""
        if hw_now < self.hw_at_update:
            raise ContractViolation(
                f"offset update at hw={hw_now} before last update hw={self.hw_at_update}"
            )
        return replace(self, value_at_update=new_value, hw_at_update=hw_now)

    def with_rate(self, rate_multiplier: float) -> "LogicalClock":
        return replace(self, rate_multiplier=rate_multiplier)


@dataclass(frozen=True)
class GaussianDelay:
    """Zero-mean Gaussian channel/timestamping noise with std ``std`` seconds.

    Negative samples are legitimate (the noise perturbs a reported clock
    value, not a physical latency) and are never clamped.
    """

    std: float = 0.0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("delay std must be non-negative")

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.normal(0.0, self.std))

    def samples(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(0.0, self.std, n)

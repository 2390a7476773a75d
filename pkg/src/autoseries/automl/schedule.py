"""Wall-clock budget accounting and the streaming update schedule."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field


class BudgetExhausted(RuntimeError):
    """No budget left for the requested call."""


@dataclass
class BudgetClock:
    """Budget with running-charge semantics.

    ``begin()``/``end()`` bracket a measured call; while a call is running,
    ``consumed_seconds`` and ``remaining`` already include its elapsed time.
    """

    total_budget_seconds: float
    safety_coefficient: float = 0.8
    charged_seconds: float = 0.0
    _started: float | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.total_budget_seconds > 0:
            raise ValueError("total_budget_seconds must be positive")
        if not 0 < self.safety_coefficient <= 1:
            raise ValueError("safety_coefficient must be in (0, 1]")

    def begin(self) -> None:
        if self._started is not None:
            raise RuntimeError("clock already running")
        self._started = time.perf_counter()

    def end(self) -> float:
        if self._started is None:
            raise RuntimeError("clock not running")
        dt = time.perf_counter() - self._started
        self._started = None
        self.charged_seconds += dt
        return dt

    def charge(self, seconds: float) -> None:
        self.charged_seconds += seconds

    @property
    def consumed_seconds(self) -> float:
        running = time.perf_counter() - self._started if self._started is not None else 0.0
        return self.charged_seconds + running

    @property
    def remaining(self) -> float:
        return max(0.0, self.total_budget_seconds - self.consumed_seconds)

    @property
    def exhausted(self) -> bool:
        return self.consumed_seconds >= self.total_budget_seconds

    def deadline(self, fraction: float = 1.0) -> float:
        """``perf_counter`` instant after ``fraction`` of the remaining budget."""
        return time.perf_counter() + fraction * self.remaining

    @property
    def overrun(self) -> float:
        return max(0.0, self.consumed_seconds - self.total_budget_seconds)


@dataclass(frozen=True)
class Strategy:
    kind: str = "budget"  # "budget" | "segments" | "never"
    segments: int = 5

    def __post_init__(self):
        if self.kind not in ("budget", "segments", "never"):
            raise ValueError(f"unknown update strategy {self.kind!r}")
        if self.segments < 1:
            raise ValueError("segments must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        """``"budget"``, ``"never"`` or ``"segments:k"``."""
        if text.startswith("segments"):
            _, _, k = text.partition(":")
            return cls("segments", int(k) if k else 5)
        return cls(text)

    def __str__(self) -> str:
        return f"segments:{self.segments}" if self.kind == "segments" else self.kind


@dataclass(frozen=True)
class UpdateSchedule:
    update_every: int
    affordable_rounds: int
    strategy: Strategy

    def __post_init__(self):
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")

    def should_update(self, step: int) -> bool:
        """``step`` counts test steps from 1."""
        return step % self.update_every == 0

    def to_dict(self) -> dict:
        return {
            "update_every": self.update_every,
            "affordable_rounds": self.affordable_rounds,
            "strategy": str(self.strategy),
        }


def _floor(x: float) -> int:
    # quotients like 80 / 8 must not land just below an integer
    return math.floor(x + 1e-9 * max(1.0, abs(x)))


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def compute_update_schedule(
    clock_or_remaining, first_train_seconds: float, n_test_steps: int, strategy: Strategy | None = None,
    safety_coefficient: float | None = None,
) -> UpdateSchedule:
    """Retrain cadence from the budget left after the first fit.

    ``clock_or_remaining`` is a :class:`BudgetClock` or a number of remaining
    seconds (then ``safety_coefficient`` is required).
    """
    strategy = strategy or Strategy()
    if n_test_steps < 1:
        raise ValueError("n_test_steps must be >= 1")
    if isinstance(clock_or_remaining, BudgetClock):
        remaining = clock_or_remaining.remaining
        safety = clock_or_remaining.safety_coefficient
    else:
        remaining = float(clock_or_remaining)
        safety = 0.8 if safety_coefficient is None else safety_coefficient
    if strategy.kind == "segments":
        return UpdateSchedule(_ceil_div(n_test_steps, strategy.segments), strategy.segments, strategy)
    if strategy.kind == "never":
        return UpdateSchedule(n_test_steps + 1, 1, strategy)
    if not first_train_seconds > 0:
        raise ValueError("first_train_seconds must be positive")
    affordable = max(1, _floor(remaining * safety / first_train_seconds))
    return UpdateSchedule(_ceil_div(n_test_steps, affordable), affordable, strategy)

"""Seedable random inputs: Wiener increments, i.i.d. discrete draws and switching signals.

Every stream is a Philox counter-based generator keyed by ``(seed, stream_id)``,
so a draw depends only on its key and never on which thread or batch asked for it.
Gaussian variates come from numpy's ziggurat sampler.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from koopman_rds.errors import InvalidArgumentError

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def spawn(self, offset: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + offset)


@dataclass(frozen=True)
class WienerIncrements:
    dt: float
    increments: np.ndarray  # (r_dims, n_steps)

    @property
    def r_dims(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]


@dataclass(frozen=True)
class DiscreteDistribution:
    values: tuple[float, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) == 0 or len(self.values) != len(self.probabilities):
            raise InvalidArgumentError("values and probabilities must be non-empty and aligned")
        if any(p < 0 for p in self.probabilities):
            raise InvalidArgumentError("probabilities must be non-negative")
        if abs(math.fsum(self.probabilities) - 1.0) > 1e-12:
            raise InvalidArgumentError(
                f"probabilities sum to {math.fsum(self.probabilities)!r}, not 1"
            )

    @classmethod
    def two_point(cls, v1: float, v2: float, p1: float) -> "DiscreteDistribution":
        return cls((float(v1), float(v2)), (float(p1), 1.0 - float(p1)))

    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probabilities))

    def variance(self) -> float:
        mu = self.mean()
        return math.fsum(p * (v - mu) ** 2 for v, p in zip(self.values, self.probabilities))


@dataclass(frozen=True)
class SwitchingSignal:
    """Piecewise-constant signal: ``values[i-1]`` on ``((i-1)*switch_dt, i*switch_dt]``."""

    values: np.ndarray
    switch_dt: float
    distribution: DiscreteDistribution

    def index_at(self, t: float) -> int:
        if t <= 0:
            return 0
        i = math.ceil(t / self.switch_dt - 1e-9) - 1
        return min(max(i, 0), len(self.values) - 1)

    def value_at(self, t: float) -> float:
        return float(self.values[self.index_at(t)])


def gaussian_increments(
    stream: RngStream, r_dims: int, n_steps: int, dt: float
) -> WienerIncrements:
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be > 0, got {dt}")
    if r_dims < 1 or n_steps < 1:
        raise InvalidArgumentError("r_dims and n_steps must be >= 1")
    # step-major draws so that the first k steps never depend on n_steps
    z = stream.generator().standard_normal((n_steps, r_dims))
    return WienerIncrements(dt=dt, increments=(math.sqrt(dt) * z).T.copy())


def discrete_iid(
    stream: RngStream, distribution: DiscreteDistribution, n: int
) -> np.ndarray:
    if n < 0:
        raise InvalidArgumentError("n must be >= 0")
    values = np.asarray(distribution.values, dtype=float)
    idx = stream.generator().choice(len(values), size=n, p=distribution.probabilities)
    return values[idx]


def uniform_symmetric(stream: RngStream, width: float, n: int) -> np.ndarray:
    """Draws uniform on ``[-width/2, width/2]`` by inverse transform."""
    if width < 0:
        raise InvalidArgumentError("width must be >= 0")
    u = stream.generator().random(n)
    return width * (u - 0.5)


def switching_signal(
    stream: RngStream,
    distribution: DiscreteDistribution,
    switch_dt: float,
    n_switches: int,
) -> SwitchingSignal:
    if switch_dt <= 0:
        raise InvalidArgumentError("switch_dt must be > 0")
    if n_switches < 1:
        raise InvalidArgumentError("n_switches must be >= 1")
    values = discrete_iid(stream, distribution, n_switches)
    return SwitchingSignal(values=values, switch_dt=switch_dt, distribution=distribution)


def as_distribution(values: Sequence[float], probabilities: Sequence[float]) -> DiscreteDistribution:
    return DiscreteDistribution(tuple(map(float, values)), tuple(map(float, probabilities)))

"""Homogeneous Poisson point processes on rectangular windows.

Sampling is reproducible and embarrassingly parallel: every replication
owns an :class:`RngStream` derived from a master seed and a stream id by
a 128-bit seed-sequence hash, so results do not depend on worker count or
call order.  Configurations are immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

Box = Sequence[tuple[float, float]]


@dataclass(frozen=True)
class Window:
    """Axis-aligned observation window, by convention [-1/2, 1/2]^d."""

    dimension: int
    half_widths: tuple[float, ...]

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"supported dimensions are 1, 2, 3; got {self.dimension}")
        if len(self.half_widths) != self.dimension:
            raise ValueError("one half width per axis required")
        if any(h <= 0 for h in self.half_widths):
            raise ValueError("window must have positive volume")

    @classmethod
    def unit(cls, dimension: int) -> "Window":
        return cls(dimension=dimension, half_widths=(0.5,) * dimension)

    @property
    def lows(self) -> np.ndarray:
        return -np.asarray(self.half_widths)

    @property
    def highs(self) -> np.ndarray:
        return np.asarray(self.half_widths)

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * np.asarray(self.half_widths)))

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lows) & (pts <= self.highs), axis=1)


@dataclass(frozen=True)
class RngStream:
    """Named random stream: (master_seed, stream_id) -> independent generator.

    Distinct ids give statistically independent streams; equal ids
    reproduce identical draws.  ``stream_id`` may be an int or a tuple of
    ints (used to separate nested purposes such as inner integration).
    """

    master_seed: int
    stream_id: int | tuple[int, ...] = 0

    def _key(self) -> tuple[int, ...]:
        sid = self.stream_id
        return (sid,) if isinstance(sid, int) else tuple(sid)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=self._key())
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, *extra: int) -> "RngStream":
        return RngStream(self.master_seed, self._key() + tuple(extra))


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """A finite point set in a window; a realization of the process."""

    points: np.ndarray
    window: Window
    provenance: tuple[int, int | tuple[int, ...]] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.window.dimension)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def sample_process(window: Window, intensity: float, stream: RngStream) -> PointConfiguration:
    """Sample a Poisson process with control ``intensity * Lebesgue``.

    The point count is Poisson with mean intensity * volume and, given the
    count, points are independent uniforms on the window, stored in draw
    order so reductions are bit-stable.
    """
    if intensity < 0:
        raise ValueError(f"intensity must be nonnegative, got {intensity}")
    gen = stream.generator()
    n = int(gen.poisson(intensity * window.volume))
    pts = gen.uniform(window.lows, window.highs, size=(n, window.dimension))
    return PointConfiguration(points=pts, window=window,
                              provenance=(stream.master_seed, stream.stream_id))


def add_point(config: PointConfiguration, z: Sequence[float]) -> PointConfiguration:
    """Return the configuration with one extra point; the input is unchanged."""
    z = np.asarray(z, dtype=float).reshape(1, config.window.dimension)
    if not bool(config.window.contains(z)[0]):
        raise ValueError(f"point {z.ravel()} lies outside the window")
    pts = np.concatenate([config.points, z], axis=0)
    return PointConfiguration(points=pts, window=config.window, provenance=config.provenance)


def _check_box(box: Box, window: Window) -> tuple[np.ndarray, np.ndarray]:
    lows = np.array([b[0] for b in box], dtype=float)
    highs = np.array([b[1] for b in box], dtype=float)
    if lows.size != window.dimension:
        raise ValueError("box must have one (low, high) pair per axis")
    if np.any(lows > highs):
        raise ValueError("box bounds must satisfy low <= high")
    if np.any(lows < window.lows - 1e-12) or np.any(highs > window.highs + 1e-12):
        raise ValueError("box must be contained in the window")
    return lows, highs


def count_in(config: PointConfiguration, box: Box) -> int:
    """Number of configuration points inside an axis-aligned sub-box."""
    lows, highs = _check_box(box, config.window)
    if len(config) == 0:
        return 0
    inside = np.all((config.points >= lows) & (config.points <= highs), axis=1)
    return int(inside.sum())


def box_volume(box: Box) -> float:
    return float(np.prod([hi - lo for lo, hi in box]))


def configuration_to_text(config: PointConfiguration, intensity: float) -> str:
    """Plain-text dump: header, then one ``x1 x2 ... xd`` line per point."""
    seed, stream = config.provenance if config.provenance else ("?", "?")
    lines = [f"# d={config.window.dimension} lambda={intensity!r} seed={seed} stream={stream}"]
    for row in config.points:
        lines.append(" ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"

"""Spectral feature extraction from raw sensor streams.

A sample stream is cut into fixed-length windows, each window is
mean-removed and transformed to a one-sided magnitude spectrum, and the
spectrum is reduced to a handful of band energies plus the window RMS.
That (B+1)-dimensional vector is the unit the outlier model scores.

All functions are pure; windowing is a single-consumer generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_WINDOW_SIZE = 256
DEFAULT_HOP = 256
# 8 roughly log-spaced bands over the 129 one-sided bins of a 256-sample window
DEFAULT_BAND_EDGES = (0, 2, 4, 8, 16, 32, 64, 96, 129)


class StreamError(ValueError):
    """Sample stream violates ordering (non-monotone sample index)."""


class ConfigError(ValueError):
    """Malformed windowing or band configuration."""


@dataclass(frozen=True)
class SensorSample:
    t: int
    value: float


@dataclass(frozen=True)
class Window:
    start_index: int
    samples: tuple[float, ...]


@dataclass(frozen=True)
class FeatureVector:
    """Per-window band energies plus RMS, both from the mean-removed window."""

    band_energies: tuple[float, ...]
    rms: float

    def as_tuple(self) -> tuple[float, ...]:
        """Flat (B+1)-vector in the order the model and the wire expect."""
        return self.band_energies + (self.rms,)

    @classmethod
    def from_flat(cls, values: Sequence[float]) -> "FeatureVector":
        values = tuple(float(v) for v in values)
        return cls(band_energies=values[:-1], rms=values[-1])


def samples_from_values(values: Iterable[float], start_t: int = 0) -> Iterator[SensorSample]:
    """Wrap a plain value stream as consecutively indexed samples."""
    for i, v in enumerate(values):
        yield SensorSample(t=start_t + i, value=float(v))


def window_stream(samples: Iterable[SensorSample], n: int, hop: int) -> Iterator[Window]:
    """Cut a sample stream into windows of n samples every hop samples.

    Window j covers stream positions [j*hop, j*hop + n); samples must
    arrive in strictly increasing t.  A trailing partial window is
    discarded.
    """
    if n < 2:
        raise ConfigError("window size must be >= 2")
    if not 1 <= hop <= n:
        raise ConfigError("hop must satisfy 1 <= hop <= n")

    buf: list[float] = []
    pos = 0           # stream position of buf[0]
    next_start = 0    # stream position of the next window to emit
    last_t: int | None = None
    for sample in samples:
        if last_t is not None and sample.t <= last_t:
            raise StreamError(f"sample index {sample.t} not after {last_t}")
        last_t = sample.t
        buf.append(sample.value)
        while pos + len(buf) >= next_start + n:
            offset = next_start - pos
            yield Window(start_index=next_start, samples=tuple(buf[offset:offset + n]))
            next_start += hop
            drop = next_start - pos
            if drop > 0:
                del buf[:drop]
                pos = next_start


def dft_magnitude(window: Window) -> np.ndarray:
    """One-sided DFT magnitudes of the mean-removed window.

    Returns |X[m]| for m = 0..N/2 where X is the order-N DFT of
    x - mean(x).  N must be even.
    """
    n = len(window.samples)
    if n % 2 != 0:
        raise ConfigError("window size must be even")
    x = np.asarray(window.samples, dtype=np.float64)
    x = x - x.mean()
    return np.abs(np.fft.rfft(x))


def band_energies(
    spectrum: np.ndarray | Sequence[float],
    band_edges: Sequence[int],
) -> tuple[float, ...]:
    """Sum squared magnitudes over [edges[b], edges[b+1]) per band.

    edges must start at 0, end at len(spectrum), and strictly increase.
    """
    spec = np.asarray(spectrum, dtype=np.float64)
    edges = list(band_edges)
    if len(edges) < 2:
        raise ConfigError("need at least one band")
    if edges[0] != 0 or edges[-1] != len(spec):
        raise ConfigError(
            f"band_edges must span [0, {len(spec)}], got [{edges[0]}, {edges[-1]}]")
    if any(a >= b for a, b in zip(edges, edges[1:])):
        raise ConfigError("band_edges must be strictly increasing")
    power = spec * spec
    return tuple(float(power[a:b].sum()) for a, b in zip(edges, edges[1:]))


def extract_features(window: Window, band_edges: Sequence[int]) -> FeatureVector:
    """Full per-window pipeline: mean removal, spectrum, bands, RMS."""
    x = np.asarray(window.samples, dtype=np.float64)
    centered = x - x.mean()
    spec = dft_magnitude(window)
    bands = band_energies(spec, band_edges)
    rms = float(np.sqrt(np.mean(centered * centered)))
    return FeatureVector(band_energies=bands, rms=rms)


def feature_stream(
    samples: Iterable[SensorSample],
    n: int = DEFAULT_WINDOW_SIZE,
    hop: int = DEFAULT_HOP,
    band_edges: Sequence[int] = DEFAULT_BAND_EDGES,
) -> Iterator[tuple[Window, FeatureVector]]:
    for window in window_stream(samples, n, hop):
        yield window, extract_features(window, band_edges)

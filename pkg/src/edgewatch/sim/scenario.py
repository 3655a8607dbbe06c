"""Synthetic fan-hum scenarios with injected faults.

A scenario is a deterministic function of its seed: per window w and
in-window sample n the signal is a stack of harmonics of a base bin plus
Gaussian noise; inside a fault interval an inharmonic component and
extra broadband noise are added (a foreign object rattling in the fan).
An optional drift ramp scales the harmonic amplitudes over a window
range, modelling a slow regime change that is normal, not a fault.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import canon
from ..features import DEFAULT_BAND_EDGES, DEFAULT_WINDOW_SIZE


class ScenarioWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FaultSpec:
    """Fault active on windows [start_window, end_window)."""
    start_window: int
    end_window: int
    extra_bin: int
    extra_amp: float
    noise_boost: float = 0.0

    def active(self, w: int) -> bool:
        return self.start_window <= w < self.end_window


@dataclass(frozen=True)
class DriftSpec:
    """Harmonic amplitudes ramp linearly from 1x at start_window to
    amp_scale_end at end_window and stay there."""
    start_window: int
    end_window: int
    amp_scale_end: float

    def scale(self, w: int) -> float:
        if w <= self.start_window:
            return 1.0
        if w >= self.end_window:
            return self.amp_scale_end
        frac = (w - self.start_window) / (self.end_window - self.start_window)
        return 1.0 + (self.amp_scale_end - 1.0) * frac


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    duration_windows: int
    base_freq_bin: int = 8
    harmonic_amps: tuple[float, ...] = (1.0, 0.5, 0.25)
    noise_sigma: float = 0.05
    faults: tuple[FaultSpec, ...] = ()
    drift: DriftSpec | None = None
    window_size: int = DEFAULT_WINDOW_SIZE
    band_edges: tuple[int, ...] = DEFAULT_BAND_EDGES
    warm_windows: int = 50
    batch_at: int | None = None    # upload+retrain trigger; default duration//2
    rule_margin: float = 0.1
    k: int = 15
    warm_factor: float = 2.2       # threshold margin for the warm-start model
    assert_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        self.harmonic_amps = tuple(float(a) for a in self.harmonic_amps)
        self.faults = tuple(
            f if isinstance(f, FaultSpec) else FaultSpec(**f) for f in self.faults)
        if self.drift is not None and not isinstance(self.drift, DriftSpec):
            self.drift = DriftSpec(**self.drift)
        self.band_edges = tuple(int(b) for b in self.band_edges)
        for f in self.faults:
            if not 0 <= f.start_window < f.end_window <= self.duration_windows:
                raise ValueError(f"fault interval [{f.start_window}, {f.end_window}) "
                                 f"outside duration {self.duration_windows}")

    @property
    def trigger_window(self) -> int:
        return self.batch_at if self.batch_at is not None else self.duration_windows // 2

    def harmonic_bins(self) -> list[int]:
        return [self.base_freq_bin * (h + 1) for h in range(len(self.harmonic_amps))]

    def fault_labels(self) -> list[bool]:
        return [any(f.active(w) for f in self.faults)
                for w in range(self.duration_windows)]

    # -- persistence ------------------------------------------------------------

    def to_obj(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "duration_windows": self.duration_windows,
            "base_freq_bin": self.base_freq_bin,
            "harmonic_amps": list(self.harmonic_amps),
            "noise_sigma": self.noise_sigma,
            "faults": [
                {"start_window": f.start_window, "end_window": f.end_window,
                 "extra_bin": f.extra_bin, "extra_amp": f.extra_amp,
                 "noise_boost": f.noise_boost}
                for f in self.faults
            ],
            "drift": None if self.drift is None else {
                "start_window": self.drift.start_window,
                "end_window": self.drift.end_window,
                "amp_scale_end": self.drift.amp_scale_end,
            },
            "window_size": self.window_size,
            "band_edges": list(self.band_edges),
            "warm_windows": self.warm_windows,
            "batch_at": self.batch_at,
            "rule_margin": self.rule_margin,
            "k": self.k,
            "warm_factor": self.warm_factor,
            "assert_bounds": dict(self.assert_bounds),
        }

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(canon.dump_line(self.to_obj()))

    @classmethod
    def from_file(cls, path: str) -> "ScenarioConfig":
        with open(path, "rb") as fh:
            obj = canon.loads(fh.read())
        known = set(cls.__dataclass_fields__)
        kwargs = {key: obj[key] for key in obj if key in known}
        if kwargs.get("drift") is not None:
            kwargs["drift"] = DriftSpec(**kwargs["drift"])
        return cls(**kwargs)


def generate_stream(config: ScenarioConfig) -> tuple[np.ndarray, list[bool]]:
    """All samples of the scenario plus the per-window fault labels.

    Deterministic given the seed; bit-identical across runs.
    """
    n = config.window_size
    harmonic_bins = set(config.harmonic_bins())
    for f in config.faults:
        if f.extra_bin in harmonic_bins:
            warnings.warn(
                f"fault bin {f.extra_bin} coincides with a harmonic; "
                "the fault is spectrally indistinguishable", ScenarioWarning,
                stacklevel=2)
    rng = np.random.default_rng(config.seed)
    t = np.arange(n)
    base = np.zeros(n)
    harmonics = []
    for h, amp in enumerate(config.harmonic_amps):
        harmonics.append(amp * np.sin(2 * math.pi * config.base_freq_bin * (h + 1) * t / n))
    fault_tones = {
        f: f.extra_amp * np.sin(2 * math.pi * f.extra_bin * t / n + 0.5)
        for f in config.faults
    }

    out = np.empty(config.duration_windows * n)
    labels = []
    for w in range(config.duration_windows):
        scale = config.drift.scale(w) if config.drift else 1.0
        x = base.copy()
        for tone in harmonics:
            x += scale * tone
        if config.noise_sigma > 0:
            x += rng.normal(0.0, config.noise_sigma, n)
        active = [f for f in config.faults if f.active(w)]
        for f in active:
            x += fault_tones[f]
            if f.noise_boost > 0:
                x += rng.normal(0.0, f.noise_boost, n)
        out[w * n:(w + 1) * n] = x
        labels.append(bool(active))
    return out, labels


# -- canned scenarios ---------------------------------------------------------

def demo_scenario(seed: int = 42) -> ScenarioConfig:
    """Desk-scale rendition of the fan demo: 600 windows, two short
    foreign-object faults (1% duty), batch retrain late in the run."""
    return ScenarioConfig(
        name="demo",
        seed=seed,
        duration_windows=600,
        base_freq_bin=8,
        harmonic_amps=(1.0, 0.5, 0.25),
        noise_sigma=0.05,
        faults=(
            FaultSpec(start_window=200, end_window=203, extra_bin=40,
                      extra_amp=0.8, noise_boost=0.2),
            FaultSpec(start_window=450, end_window=453, extra_bin=40,
                      extra_amp=0.8, noise_boost=0.2),
        ),
        batch_at=560,
        assert_bounds={
            "max_speed_ratio": 0.05,
            "min_recall": 0.9,
            "min_precision": 0.8,
            "max_latency_windows": 3,
        },
    )


def zero_fault_scenario(seed: int = 43) -> ScenarioConfig:
    """False-positive budget check: no faults at all."""
    return ScenarioConfig(
        name="zero-fault",
        seed=seed,
        duration_windows=600,
        noise_sigma=0.05,
        faults=(),
        batch_at=560,
        assert_bounds={"max_speed_ratio": 0.01, "max_orders": 0},
    )


def drift_scenario(seed: int = 44) -> ScenarioConfig:
    """Drifted-but-normal regime for the retrain loop: harmonic
    amplitudes ramp to 1.6x, no faults; batch trigger after the ramp."""
    return ScenarioConfig(
        name="drift",
        seed=seed,
        duration_windows=600,
        noise_sigma=0.05,
        drift=DriftSpec(start_window=100, end_window=300, amp_scale_end=1.6),
        batch_at=450,
        faults=(),
    )


def catalog_for_scenario(config: ScenarioConfig) -> list[dict]:
    """Fault catalog whose primary signature is the noise-free feature
    vector of a fault window, plus a decoy entry for an amplitude fault.

    Built from the scenario itself so nearest-signature classification
    has a deterministic right answer.
    """
    from ..features import Window, extract_features

    n = config.window_size
    t = np.arange(n)

    def tone_features(extra: tuple[int, float] | None, scale: float = 1.0):
        x = np.zeros(n)
        for h, amp in enumerate(config.harmonic_amps):
            x += scale * amp * np.sin(2 * math.pi * config.base_freq_bin * (h + 1) * t / n)
        if extra is not None:
            bin_, amp_ = extra
            x += amp_ * np.sin(2 * math.pi * bin_ * t / n + 0.5)
        fv = extract_features(Window(0, tuple(x)), config.band_edges)
        return list(fv.as_tuple())

    primary = config.faults[0] if config.faults else FaultSpec(0, 1, 40, 0.8, 0.0)
    return [
        {
            "cause": "foreign-object-ingestion",
            "part": "fan-unit-a",
            "action": "REPLACE",
            "signature": tone_features((primary.extra_bin, primary.extra_amp)),
        },
        {
            "cause": "rotor-imbalance",
            "part": "rotor-hub",
            "action": "INSPECT",
            "signature": tone_features(None, scale=2.5),
        },
    ]

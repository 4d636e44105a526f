"""Panel data generator for the simulation benchmark.

Generates longitudinal data for many individuals sharing one excitation
pattern.  Each individual gets its own decay time, gain and equilibrium,
drawn around population means, then an exact trajectory, then additive
Gaussian measurement noise whose standard deviation is a percentage of
that individual's noiseless signal amplitude (max minus min).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import ValidationError
from .model import FirstOrderParams, integrate

__all__ = [
    "MIN_N_OBS",
    "MIN_DECAY_TIME",
    "ExcitationShape",
    "SimulationCondition",
    "IndividualSeries",
    "Panel",
    "make_excitation",
    "draw_individual_params",
    "generate_panel",
]

MIN_N_OBS = 20
#: Redraw individual decay times at or below this bound: a decay time under
#: one sampling interval is not identifiable from unit-spaced observations.
MIN_DECAY_TIME = 1.0

_PULSE_COUNTS = (3, 5, 10)
_TWO_STEPS_BLOCKS = ((0.2, 0.4), (0.6, 0.8))
_ONE_STEP_BLOCK = (0.2, 0.5)


@dataclass(frozen=True)
class ExcitationShape:
    """One of the five binary excitation patterns used in the benchmark.

    ``two_steps``: two plateaus at 1 covering the [20%, 40%) and
    [60%, 80%) fractions of the observation window.  ``one_step``: a
    single plateau over [20%, 50%).  ``pulses``: 3, 5 or 10 isolated
    one-sample spikes spread evenly over the window.
    """

    kind: str
    n_pulses: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("two_steps", "one_step", "pulses"):
            raise ValidationError(f"unknown excitation kind {self.kind!r}")
        if self.kind == "pulses":
            if self.n_pulses not in _PULSE_COUNTS:
                raise ValidationError(
                    f"n_pulses must be one of {_PULSE_COUNTS}, "
                    f"got {self.n_pulses!r}"
                )
        elif self.n_pulses is not None:
            raise ValidationError(
                f"n_pulses only applies to kind='pulses', got kind="
                f"{self.kind!r}"
            )

    @classmethod
    def two_steps(cls) -> "ExcitationShape":
        return cls("two_steps")

    @classmethod
    def one_step(cls) -> "ExcitationShape":
        return cls("one_step")

    @classmethod
    def pulses(cls, n: int) -> "ExcitationShape":
        return cls("pulses", n_pulses=n)

    def label(self) -> str:
        if self.kind == "pulses":
            return f"pulses{self.n_pulses}"
        return self.kind

    @classmethod
    def from_label(cls, label: str) -> "ExcitationShape":
        """Parse labels like ``two_steps``, ``one_step``, ``pulses10``."""
        if label.startswith("pulses"):
            tail = label[len("pulses"):]
            try:
                return cls.pulses(int(tail))
            except ValueError:
                raise ValidationError(
                    f"malformed pulses label {label!r}"
                ) from None
        return cls(label)


def make_excitation(shape: ExcitationShape, n_obs: int) -> np.ndarray:
    """Binary excitation values for ``n_obs`` unit-spaced observations."""
    if n_obs < MIN_N_OBS:
        raise ValidationError(
            f"n_obs must be >= {MIN_N_OBS}, got {n_obs}"
        )
    u = np.zeros(n_obs)
    if shape.kind == "pulses":
        k = shape.n_pulses
        for j in range(1, k + 1):
            u[int(j * n_obs / (k + 1))] = 1.0
        return u
    blocks = (
        _TWO_STEPS_BLOCKS if shape.kind == "two_steps" else (_ONE_STEP_BLOCK,)
    )
    idx = np.arange(n_obs) / n_obs
    for lo, hi in blocks:
        u[(idx >= lo) & (idx < hi)] = 1.0
    return u


@dataclass(frozen=True)
class SimulationCondition:
    """Full description of one cell of the simulation design.

    Defaults correspond to the reference cell: decay time 15, unit gain,
    equilibrium 0.5, two-steps excitation, 50 observations for each of
    50 individuals, noise at 30% of the signal amplitude, 20%
    between-individual spread on all three parameters, mixed-model
    regression with excitation included.
    """

    decay_rate: float = 1.0 / 15.0
    gain: float = 1.0
    equilibrium: float = 0.5
    shape: ExcitationShape = field(default_factory=ExcitationShape.two_steps)
    n_obs: int = 50
    n_indiv: int = 50
    stn_pct: float = 30.0
    sd_pct: float = 20.0
    regression: str = "lmm"
    homogeneous: bool = False
    condition_id: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.decay_rate) or self.decay_rate <= 0.0:
            raise ValidationError(
                f"decay_rate must be > 0, got {self.decay_rate!r}"
            )
        for name in ("gain", "equilibrium"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.n_obs < MIN_N_OBS:
            raise ValidationError(
                f"n_obs must be >= {MIN_N_OBS}, got {self.n_obs}"
            )
        if self.n_indiv < 1:
            raise ValidationError(f"n_indiv must be >= 1, got {self.n_indiv}")
        for name in ("stn_pct", "sd_pct"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValidationError(f"{name} must be >= 0, got {v!r}")
        if self.regression not in ("lmm", "ols", "gee"):
            raise ValidationError(
                f"regression must be 'lmm', 'ols' or 'gee', "
                f"got {self.regression!r}"
            )

    @property
    def mean_params(self) -> FirstOrderParams:
        return FirstOrderParams(
            decay_rate=self.decay_rate, gain=self.gain,
            equilibrium=self.equilibrium, initial_value=self.equilibrium,
        )

    def with_id(self, condition_id: int) -> "SimulationCondition":
        return replace(self, condition_id=condition_id)


@dataclass
class IndividualSeries:
    """Observed series of one individual, with simulation truth if known."""

    individual_id: int
    times: np.ndarray
    signal: np.ndarray
    excitation: np.ndarray
    signal_true: np.ndarray | None = None
    params: FirstOrderParams | None = None


@dataclass
class Panel:
    """A collection of individual series sharing a common design."""

    individuals: list[IndividualSeries]

    def __post_init__(self) -> None:
        if not self.individuals:
            raise ValidationError("panel must contain at least one individual")
        ids = [s.individual_id for s in self.individuals]
        if len(set(ids)) != len(ids):
            raise ValidationError("individual ids must be unique")

    def __iter__(self) -> Iterator[IndividualSeries]:
        return iter(self.individuals)

    def __len__(self) -> int:
        return len(self.individuals)

    @property
    def has_truth(self) -> bool:
        return all(s.signal_true is not None for s in self.individuals)


def draw_individual_params(mean: FirstOrderParams, sd_pct: float,
                           rng: np.random.Generator) -> FirstOrderParams:
    """Draw one individual's parameters around population means.

    Decay time, gain and equilibrium are drawn independently from
    normals centred on the means with standard deviation
    ``sd_pct/100 * |mean|``.  Decay times at or below
    :data:`MIN_DECAY_TIME` are redrawn (up to 100 attempts).  The
    individual's initial value is its drawn equilibrium, so every
    trajectory starts at rest.
    """
    frac = sd_pct / 100.0
    mean_dt = mean.decay_time
    decay_time = rng.normal(mean_dt, frac * abs(mean_dt))
    attempts = 1
    while decay_time <= MIN_DECAY_TIME:
        if attempts >= 100:
            raise ValidationError(
                "could not draw a decay time above "
                f"{MIN_DECAY_TIME} in 100 attempts; reduce sd_pct or "
                "increase the mean decay time"
            )
        decay_time = rng.normal(mean_dt, frac * abs(mean_dt))
        attempts += 1
    gain = rng.normal(mean.gain, frac * abs(mean.gain))
    equilibrium = rng.normal(mean.equilibrium, frac * abs(mean.equilibrium))
    return FirstOrderParams(
        decay_rate=1.0 / decay_time, gain=gain, equilibrium=equilibrium,
        initial_value=equilibrium,
    )


def generate_panel(condition: SimulationCondition,
                   seed: int | np.random.SeedSequence) -> Panel:
    """Generate one panel for a simulation condition.

    Each individual draws from an independent random substream, so the
    panel is reproducible from ``seed`` and individual trajectories do
    not interact.  Noise standard deviation is
    ``stn_pct/100`` times that individual's noiseless amplitude.
    """
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    else:
        root = np.random.SeedSequence(seed)
    times = np.arange(condition.n_obs, dtype=float)
    u = make_excitation(condition.shape, condition.n_obs)
    mean = condition.mean_params

    individuals = []
    for i, child in enumerate(root.spawn(condition.n_indiv)):
        rng = np.random.Generator(np.random.PCG64(child))
        params = draw_individual_params(mean, condition.sd_pct, rng)
        clean = integrate(params, u, times)
        amplitude = float(np.ptp(clean))
        sigma = condition.stn_pct / 100.0 * amplitude
        noise = rng.normal(0.0, sigma, size=condition.n_obs) if sigma > 0 \
            else np.zeros(condition.n_obs)
        individuals.append(IndividualSeries(
            individual_id=i + 1,
            times=times.copy(),
            signal=clean + noise,
            excitation=u.copy(),
            signal_true=clean,
            params=params,
        ))
    return Panel(individuals)

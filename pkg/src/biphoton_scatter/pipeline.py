"""Source -> S1 -> object -> S2 -> detection plane, for the three geometries."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .coincidence import CoincidenceMatrix, ImageProfile, Label
from .grid import BiphotonState, Direction, GridSpec, centered_dft, fourier_2d
from .screens import (
    Arm,
    PhaseScreen,
    ScreenParams,
    apply_screen_both,
    apply_screen_one,
    generate_screen,
)
from .source import SourceParams, make_source

log = logging.getLogger(__name__)

PLANE_BEFORE = 0
PLANE_AFTER = 1


class PipelineError(ValueError):
    pass


class Configuration(enum.Enum):
    BOTH_PHOTONS = "both"
    ONE_ARM = "one-arm"
    STATIC_AFTER_OBJECT = "static"


@dataclass(frozen=True)
class ObjectMask:
    grid: GridSpec
    transmission: np.ndarray
    descriptor: str = "custom"

    def __post_init__(self):
        t = np.asarray(self.transmission, dtype=float)
        if t.shape != (self.grid.size,):
            raise PipelineError("object length does not match grid")
        if np.any(t < 0) or np.any(t > 1):
            raise PipelineError("object transmission must lie in [0, 1]")
        object.__setattr__(self, "transmission", t)


def aperture_array(grid: GridSpec, period: int = 32, duty: float = 0.5) -> ObjectMask:
    """Periodic open apertures; each period starts open at the grid center."""
    if period < 2 or not 0 < duty < 1:
        raise PipelineError("aperture array needs period >= 2 and 0 < duty < 1")
    x = np.arange(grid.size) - grid.center
    t = ((x % period) < duty * period).astype(float)
    return ObjectMask(grid, t, f"apertures(period={period},duty={duty:g})")


def lines_object(grid: GridSpec, count: int = 3, width: int = 8, gap: int = 16) -> ObjectMask:
    """``count`` opaque lines of ``width`` px separated by ``gap`` px, centered."""
    t = np.ones(grid.size)
    span = count * width + (count - 1) * gap
    start = grid.center - span // 2
    for k in range(count):
        a = start + k * (width + gap)
        t[max(a, 0) : max(a + width, 0)] = 0.0
    return ObjectMask(grid, t, f"lines(count={count},width={width},gap={gap})")


def object_from_file(path, grid: GridSpec) -> ObjectMask:
    """One transmission value per line; values outside [0, 1] are clamped with a warning."""
    values = np.loadtxt(Path(path), dtype=float, ndmin=1)
    if values.shape != (grid.size,):
        raise PipelineError(f"{path}: expected {grid.size} transmission values, found {values.size}")
    if np.any(values < 0) or np.any(values > 1):
        log.warning("%s: clamping %d transmission values to [0, 1]", path,
                    int(np.sum((values < 0) | (values > 1))))
        values = np.clip(values, 0, 1)
    return ObjectMask(grid, values, f"file({Path(path).name})")


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridSpec
    source: SourceParams
    obj: ObjectMask
    screen: ScreenParams | None = None
    configuration: Configuration = Configuration.BOTH_PHOTONS
    screens_before: bool = True
    screens_after: bool = True
    throughput_weighting: bool = True
    strict: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.obj.grid != self.grid:
            raise PipelineError("object grid does not match source grid")
        if self.configuration is Configuration.STATIC_AFTER_OBJECT:
            if self.screens_before:
                raise PipelineError("static-after-object configuration forbids screens before the object")
            if self.screen is not None and self.screen.realization_count != 1:
                raise PipelineError("static-after-object configuration requires a single realization (R=1)")

    @property
    def realizations(self) -> int:
        return 1 if self.screen is None else self.screen.realization_count

    @property
    def scattering(self) -> bool:
        return self.screen is not None and (self.screens_before or self.screens_after)

    def without_scattering(self) -> "PipelineConfig":
        return replace(self, screen=None)


@dataclass(frozen=True)
class Realization:
    index: int
    state: BiphotonState  # position domain, renormalized
    throughput: float
    signal_singles: np.ndarray | None  # unnormalized signal-arm intensity
    signal_throughput: float


def _screens(config: PipelineConfig, r: int) -> tuple[PhaseScreen | None, PhaseScreen | None]:
    if config.screen is None:
        return None, None
    s1 = generate_screen(config.grid, config.screen, r, PLANE_BEFORE) if config.screens_before else None
    s2 = generate_screen(config.grid, config.screen, r, PLANE_AFTER) if config.screens_after else None
    return s1, s2


def _apply(config: PipelineConfig, state: BiphotonState, screen: PhaseScreen | None) -> BiphotonState:
    if screen is None:
        return state
    if config.configuration is Configuration.ONE_ARM:
        return apply_screen_one(state, screen, Arm.SIGNAL)
    return apply_screen_both(state, screen)


def _signal_singles(amp_after_object: np.ndarray, s2: PhaseScreen | None) -> np.ndarray:
    # Unitaries on the idler do not change the signal marginal, so only
    # the signal axis is propagated through S2.
    if s2 is None:
        return np.sum(np.abs(amp_after_object) ** 2, axis=0)
    a = centered_dft(amp_after_object, axis=1, direction=Direction.FORWARD)
    a = a * np.exp(1j * s2.phase)[None, :]
    a = centered_dft(a, axis=1, direction=Direction.INVERSE)
    return np.sum(np.abs(a) ** 2, axis=0)


def propagate_realization(config: PipelineConfig, r: int, source: BiphotonState | None = None,
                          with_singles: bool = False) -> Realization:
    """One realization of the chosen geometry, ending in the position domain.

    The object acts on both coordinates (both-photon and static
    geometries) or on the signal coordinate only (one-arm geometry). The
    pre-renormalization norm is returned as the throughput.
    """
    if not 0 <= r < config.realizations:
        raise PipelineError(f"realization index {r} outside [0, {config.realizations})")
    psi = source if source is not None else make_source(config.grid, config.source, config.strict)
    s1, s2 = _screens(config, r)
    O = config.obj.transmission

    state = fourier_2d(_apply(config, psi, s1), Direction.INVERSE)
    amp_in = state.amplitude
    if config.configuration is Configuration.ONE_ARM:
        amp = amp_in * O[None, :]
    else:
        amp = amp_in * O[:, None] * O[None, :]
    throughput = float(np.sum(np.abs(amp) ** 2))

    singles = None
    signal_throughput = throughput
    if with_singles:
        if config.configuration is Configuration.ONE_ARM:
            amp_s = amp
        else:
            amp_s = amp_in * O[None, :]
        signal_throughput = float(np.sum(np.abs(amp_s) ** 2))
        singles = _signal_singles(amp_s, s2)

    state = state.with_amplitude(amp)
    state = fourier_2d(state, Direction.FORWARD)
    state = fourier_2d(_apply(config, state, s2), Direction.INVERSE)
    if throughput <= 0:
        raise PipelineError(f"realization {r}: object blocks all pairs")
    state = state.with_amplitude(state.amplitude / np.sqrt(throughput))
    return Realization(r, state, throughput, singles, signal_throughput)


def iter_realizations(config: PipelineConfig, with_singles: bool = False,
                      indices=None) -> Iterator[Realization]:
    psi = make_source(config.grid, config.source, config.strict)
    for r in (range(config.realizations) if indices is None else indices):
        try:
            yield propagate_realization(config, r, psi, with_singles)
        except (PipelineError, ValueError) as exc:
            raise PipelineError(f"realization {r}: {exc}") from exc


@dataclass(frozen=True)
class Ensemble:
    gamma: CoincidenceMatrix
    singles: ImageProfile
    throughputs: np.ndarray
    signal_throughputs: np.ndarray

    @property
    def mean_throughput(self) -> float:
        return float(self.throughputs.mean())

    @property
    def mean_signal_throughput(self) -> float:
        return float(self.signal_throughputs.mean())


def run_ensemble(config: PipelineConfig, with_singles: bool = True) -> Ensemble:
    """Probability-averaged coincidences (and singles) over all realizations.

    ``Gamma = sum_r T_r |psi_r|^2`` normalized to unit sum; with
    ``throughput_weighting=False`` every realization has weight 1.
    Intensities are averaged, never amplitudes.
    """
    M = config.grid.size
    acc = np.zeros((M, M))
    sacc = np.zeros(M)
    ts, tss = [], []
    for real in iter_realizations(config, with_singles):
        w = real.throughput if config.throughput_weighting else 1.0
        acc += w * real.state.probability
        if with_singles:
            ws = 1.0 if config.throughput_weighting else 1.0 / real.signal_throughput
            sacc += ws * real.signal_singles
        ts.append(real.throughput)
        tss.append(real.signal_throughput)
    gamma = CoincidenceMatrix.from_probability(config.grid, acc)
    if with_singles:
        singles = ImageProfile(config.grid, sacc / sacc.sum(), Label.SINGLES)
    else:
        singles = ImageProfile(config.grid, gamma.counts.sum(axis=0), Label.SINGLES)
    return Ensemble(gamma, singles, np.array(ts), np.array(tss))


def ensemble_coincidences(config: PipelineConfig) -> CoincidenceMatrix:
    return run_ensemble(config, with_singles=False).gamma


def source_envelope(config: PipelineConfig) -> np.ndarray:
    """Signal-arm intensity of the unscattered source in the object plane."""
    psi = make_source(config.grid, config.source, config.strict)
    return fourier_2d(psi, Direction.INVERSE).probability.sum(axis=0)


def ground_truth(config: PipelineConfig) -> ImageProfile:
    """Object intensity transmission times the source envelope, unit sum."""
    img = config.obj.transmission**2 * source_envelope(config)
    return ImageProfile(config.grid, img / img.sum(), Label.TRUTH)

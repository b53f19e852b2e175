"""Random far-field phase screens and their scattering strength.

A screen is built from ``S`` phases drawn uniformly in ``[-pi, pi]``,
placed on a periodic knot grid of spacing ``M / S`` and linearly
interpolated to ``M`` samples. The interpolated screen is then rolled by a
random integer so the ensemble is statistically stationary; without the
roll the knot lattice pins the phase structure to fixed pixels.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fitting import WidthFitError, gaussian_width
from .grid import BiphotonState, Domain, GridSpec

CALIBRATION_SEED = 0x5C4A77E5
CALIBRATION_REALIZATIONS = 200


class ScreenError(ValueError):
    pass


class Arm(enum.Enum):
    IDLER = 0
    SIGNAL = 1


@dataclass(frozen=True)
class ScreenParams:
    segments: int
    realization_count: int = 1
    base_seed: int = 0

    def __post_init__(self):
        if self.segments < 2:
            raise ScreenError(f"segments must be >= 2, got {self.segments}")
        if self.realization_count < 1:
            raise ScreenError(f"realization_count must be >= 1, got {self.realization_count}")
        if not 0 <= self.base_seed < 2**64:
            raise ScreenError("base_seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class PhaseScreen:
    grid: GridSpec
    phase: np.ndarray
    realization: int
    params: ScreenParams
    plane: int = 0

    def __post_init__(self):
        if self.phase.shape != (self.grid.size,):
            raise ScreenError("phase length does not match grid")
        if np.any(np.abs(self.phase) > np.pi + 1e-12):
            raise ScreenError("screen phases must lie in [-pi, pi]")


@dataclass(frozen=True)
class ScatterCharacterization:
    w_A: float
    strength: float
    A: np.ndarray


def screen_rng(base_seed: int, r: int, plane: int = 0) -> np.random.Generator:
    """Counter-based stream keyed only by ``(base_seed, r, plane)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(base_seed), int(r), int(plane)])))


def interpolate_periodic(knots: np.ndarray, M: int) -> np.ndarray:
    S = len(knots)
    xk = np.arange(S + 1) * (M / S)
    return np.interp(np.arange(M), xk, np.append(knots, knots[0]))


def generate_screen(grid: GridSpec, params: ScreenParams, r: int, plane: int = 0) -> PhaseScreen:
    """Realization ``r`` of the screen family; ``plane`` selects an independent substream (S1=0, S2=1)."""
    M = grid.size
    if not 2 <= params.segments <= M:
        raise ScreenError(f"segments must satisfy 2 <= S <= M={M}, got {params.segments}")
    if not 0 <= r < params.realization_count:
        raise ScreenError(f"realization index {r} outside [0, {params.realization_count})")
    rng = screen_rng(params.base_seed, r, plane)
    knots = rng.uniform(-np.pi, np.pi, params.segments)
    shift = int(rng.integers(M))
    phase = np.roll(interpolate_periodic(knots, M), shift)
    phase = (phase + np.pi) % (2 * np.pi) - np.pi if np.any(np.abs(phase) > np.pi) else phase
    return PhaseScreen(grid, phase, r, params, plane)


def zero_screen(grid: GridSpec) -> PhaseScreen:
    return PhaseScreen(grid, np.zeros(grid.size), 0, ScreenParams(2))


def _require_momentum(state: BiphotonState) -> None:
    if state.domain is not Domain.MOMENTUM:
        raise ScreenError("phase screens act in the momentum domain; state is in the position domain")


def apply_screen_both(state: BiphotonState, screen: PhaseScreen) -> BiphotonState:
    _require_momentum(state)
    ph = np.exp(1j * screen.phase)
    return state.with_amplitude(state.amplitude * ph[:, None] * ph[None, :])


def apply_screen_one(state: BiphotonState, screen: PhaseScreen, arm: Arm) -> BiphotonState:
    _require_momentum(state)
    ph = np.exp(1j * screen.phase)
    if arm is Arm.IDLER:
        return state.with_amplitude(state.amplitude * ph[:, None])
    return state.with_amplitude(state.amplitude * ph[None, :])


def autocorrelation(phases: np.ndarray) -> np.ndarray:
    """Realization-averaged circular ``sum_x' phi(x + x') phi(x')``, lag 0 at index ``M // 2``.

    No mean is subtracted, so ``A[M // 2]`` is the summed squared phase.
    """
    phases = np.atleast_2d(np.asarray(phases, dtype=float))
    F = np.fft.fft(phases, axis=1)
    A = np.fft.ifft(F * np.conj(F), axis=1).real.mean(axis=0)
    return np.fft.fftshift(A)


def characterize_screens(screens: Sequence[PhaseScreen], w_q: float) -> ScatterCharacterization:
    screens = list(screens)
    if not screens:
        raise ScreenError("no screens to characterize")
    grid = screens[0].grid
    if any(s.grid != grid for s in screens):
        raise ScreenError("screens do not share a grid")
    A = autocorrelation(np.stack([s.phase for s in screens]))
    try:
        w_A = gaussian_width(A, power=1.0, contiguous=True).width
    except WidthFitError as exc:
        raise ScreenError(f"no scattering: autocorrelation width w_A is undefined ({exc})") from None
    return ScatterCharacterization(w_A, w_q / w_A, A)


@functools.lru_cache(maxsize=4096)
def calibrated_width(M: int, segments: int, realizations: int = CALIBRATION_REALIZATIONS,
                     seed: int = CALIBRATION_SEED) -> float:
    grid = GridSpec(M)
    params = ScreenParams(segments, realizations, seed)
    screens = [generate_screen(grid, params, r) for r in range(realizations)]
    return characterize_screens(screens, 1.0).w_A


def calibration_table(grid: GridSpec, segments: Iterable[int], realizations: int = CALIBRATION_REALIZATIONS,
                      seed: int = CALIBRATION_SEED) -> list[tuple[int, float]]:
    return [(int(S), calibrated_width(grid.size, int(S), realizations, seed)) for S in segments]


def segments_for_strength(grid: GridSpec, w_q: float, strength: float) -> int:
    """Segment count whose calibrated ``w_q / w_A`` is closest (in log) to ``strength``."""
    if strength <= 0:
        raise ScreenError("target strength must be > 0")
    M = grid.size
    guess = 0.85 * M * strength / w_q
    lo = max(2, int(np.floor(guess * 0.6)))
    hi = min(M, int(np.ceil(guess * 1.6)) + 1)
    if lo > hi:
        lo = hi = min(max(2, int(round(guess))), M)
    best, best_err = lo, np.inf
    for S in range(lo, hi + 1):
        try:
            err = abs(np.log(w_q / calibrated_width(M, S)) - np.log(strength))
        except ScreenError:
            continue
        if err < best_err:
            best, best_err = S, err
    return best


def save_screen(path, screen: PhaseScreen) -> None:
    np.savetxt(path, screen.phase, fmt="%.17g")


def load_screen(path, grid: GridSpec, params: ScreenParams | None = None) -> PhaseScreen:
    phase = np.loadtxt(Path(path), dtype=float, ndmin=1)
    return PhaseScreen(grid, phase, 0, params or ScreenParams(2))

"""Discrete grids, field containers and the centered unitary DFT.

All transforms use ``norm="ortho"`` together with ``ifftshift``/``fftshift``
so that both position and momentum arrays are stored center-origin: index
``M // 2`` is the zero coordinate.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.fft


class Domain(enum.Enum):
    POSITION = "position"
    MOMENTUM = "momentum"

    def conjugate(self) -> "Domain":
        return Domain.MOMENTUM if self is Domain.POSITION else Domain.POSITION


class Direction(enum.Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


@dataclass(frozen=True)
class GridSpec:
    size: int
    pitch: float = 1.0

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1 or self.size & (self.size - 1):
            raise ValueError(f"grid size must be a power of two, got {self.size}")
        if not self.pitch > 0:
            raise ValueError(f"grid pitch must be > 0, got {self.pitch}")

    @property
    def coords(self) -> np.ndarray:
        return (np.arange(self.size) - self.size // 2) * self.pitch

    @property
    def center(self) -> int:
        return self.size // 2


def make_grid(M: int, pitch: float = 1.0) -> GridSpec:
    """Centered grid with coordinates ``(k - M/2) * pitch`` for ``k = 0..M-1``."""
    return GridSpec(int(M), float(pitch))


@dataclass(frozen=True)
class Field1D:
    grid: GridSpec
    values: np.ndarray
    domain: Domain = Domain.POSITION

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.shape != (self.grid.size,):
            raise ValueError(f"field length {values.shape} does not match grid size {self.grid.size}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class BiphotonState:
    """Joint amplitude indexed ``[idler, signal]``."""

    grid: GridSpec
    amplitude: np.ndarray
    domain: Domain = Domain.MOMENTUM
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=np.complex128)
        M = self.grid.size
        if amp.shape != (M, M):
            raise ValueError(f"amplitude shape {amp.shape} does not match grid ({M}, {M})")
        object.__setattr__(self, "amplitude", amp)

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2))

    @property
    def probability(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    def with_amplitude(self, amplitude: np.ndarray, domain: Domain | None = None) -> "BiphotonState":
        return BiphotonState(self.grid, amplitude, self.domain if domain is None else domain, dict(self.meta))

    def normalized(self) -> "BiphotonState":
        n = self.norm
        if n <= 0:
            raise ValueError("cannot normalize a state with zero norm")
        return self.with_amplitude(self.amplitude / np.sqrt(n))


def centered_dft(a: np.ndarray, axis=-1, direction: Direction = Direction.FORWARD) -> np.ndarray:
    """Unitary, center-origin DFT of ``a`` along ``axis`` (int or tuple)."""
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    a = scipy.fft.ifftshift(a, axes=axes)
    if direction is Direction.FORWARD:
        a = scipy.fft.fftn(a, axes=axes, norm="ortho")
    else:
        a = scipy.fft.ifftn(a, axes=axes, norm="ortho")
    return scipy.fft.fftshift(a, axes=axes)


def fourier_2d(state: BiphotonState, direction: Direction) -> BiphotonState:
    """Lens transform applied to both photons; flips the domain tag."""
    amp = centered_dft(state.amplitude, axis=(0, 1), direction=direction)
    return state.with_amplitude(amp, state.domain.conjugate())


def to_position(state: BiphotonState) -> BiphotonState:
    if state.domain is Domain.POSITION:
        return state
    return fourier_2d(state, Direction.INVERSE)


def to_momentum(state: BiphotonState) -> BiphotonState:
    if state.domain is Domain.MOMENTUM:
        return state
    return fourier_2d(state, Direction.FORWARD)

"""Double-Gaussian biphoton source in the momentum domain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fitting import gaussian_width
from .grid import BiphotonState, Domain, GridSpec, to_position

MIN_WIDTH_PX = 4.0


class SourceError(ValueError):
    pass


@dataclass(frozen=True)
class SourceParams:
    """Momentum-space widths in pixels.

    ``w_q`` is the phase-matching (anti-correlation) width, ``w_0`` the pump
    width. Both follow the ``exp(-u^2 / w^2)`` amplitude convention.
    """

    w_q: float
    w_0: float

    def __post_init__(self):
        if not (self.w_q > 0 and self.w_0 > 0):
            raise SourceError(f"widths must be positive, got w_q={self.w_q}, w_0={self.w_0}")
        if not np.isfinite(self.w_q / self.w_0) or self.w_q < self.w_0:
            raise SourceError(f"entanglement ratio w_q/w_0 must be finite and >= 1, got {self.w_q / self.w_0}")

    @property
    def entanglement(self) -> float:
        return self.w_q / self.w_0

    @classmethod
    def from_ratio(cls, w_q: float, ratio: float) -> "SourceParams":
        return cls(float(w_q), float(w_q) / float(ratio))


def check_resolvable(grid: GridSpec, params: SourceParams) -> None:
    upper = grid.size / 4
    for name, w in (("w_q", params.w_q), ("w_0", params.w_0)):
        if w < MIN_WIDTH_PX:
            raise SourceError(f"{name}={w:.3g} px is below the {MIN_WIDTH_PX:g} px resolvability bound")
        if w > upper:
            raise SourceError(f"{name}={w:.3g} px exceeds the M/4={upper:g} px resolvability bound")
    if params.w_q <= params.w_0:
        raise SourceError("strict mode requires w_q > w_0")


def make_source(grid: GridSpec, params: SourceParams, strict: bool = True) -> BiphotonState:
    """Normalized ``exp(-(qi-qs)^2/w_q^2) exp(-(qi+qs)^2/w_0^2)`` on ``grid``.

    With ``strict`` the widths must lie in ``[4, M/4]`` pixels and
    ``w_q > w_0``; pass ``strict=False`` to run under-sampled pumps.
    """
    if strict:
        check_resolvable(grid, params)
    q = np.arange(grid.size) - grid.center
    qi = q[:, None]
    qs = q[None, :]
    amp = np.exp(-((qi - qs) ** 2) / params.w_q**2) * np.exp(-((qi + qs) ** 2) / params.w_0**2)
    amp = amp / np.sqrt(np.sum(amp**2))
    return BiphotonState(grid, amp.astype(np.complex128), Domain.MOMENTUM, {"source": params})


# Closed forms for the continuous double Gaussian. All widths are 1/e^2
# half-widths of the corresponding intensity profile, in pixels.


def momentum_marginal_width(params: SourceParams) -> float:
    return float(np.hypot(params.w_q, params.w_0) / 2)


def position_difference_width(grid: GridSpec, w_q: float) -> float:
    """No-scattering correlation width along ``x_i - x_s`` under the unitary DFT."""
    return 2 * grid.size / (np.pi * w_q)


def position_sum_width(grid: GridSpec, w_0: float) -> float:
    return 2 * grid.size / (np.pi * w_0)


def position_marginal_width(grid: GridSpec, params: SourceParams) -> float:
    return float(np.hypot(position_difference_width(grid, params.w_q), position_sum_width(grid, params.w_0)) / 2)


def offset_profile(prob: np.ndarray) -> np.ndarray:
    """Circular sum of ``prob[x + d, x]`` over ``x`` for ``d = -M/2 .. M/2 - 1``."""
    M = prob.shape[0]
    idx = np.arange(M)
    rows = (idx[None, :] + np.arange(-(M // 2), M - M // 2)[:, None]) % M
    return prob[rows, idx[None, :]].sum(axis=1)


def position_correlation_width(state: BiphotonState) -> float:
    """1/e^2 half-width (px) of the ``x_i - x_s`` profile of ``|psi|^2``."""
    pos = to_position(state)
    return gaussian_width(offset_profile(pos.probability), power=2.0).width

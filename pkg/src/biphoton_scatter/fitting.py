"""Gaussian width estimation shared by correlation and autocorrelation analysis."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

FIT_THRESHOLD = 0.01
MAX_RELATIVE_RESIDUAL = 0.10


class WidthFitError(ValueError):
    """Raised when a profile carries no usable peak."""


@dataclass(frozen=True)
class WidthEstimate:
    width: float
    center: float
    method: str  # "fit" or "moment"
    residual: float


def _gauss(x, a, w, c, power):
    return a * np.exp(-power * (x - c) ** 2 / w**2)


def moment_width(x: np.ndarray, profile: np.ndarray, power: float = 2.0) -> tuple[float, float]:
    """Second-moment width of ``profile`` expressed as the ``w`` of ``exp(-power x^2 / w^2)``."""
    p = np.clip(np.asarray(profile, dtype=float), 0, None)
    total = p.sum()
    if total <= 0:
        raise WidthFitError("profile has no positive mass")
    mu = float(np.sum(p * x) / total)
    var = float(np.sum(p * (x - mu) ** 2) / total)
    return float(np.sqrt(2 * power * var)), mu


def gaussian_width(
    profile,
    x=None,
    power: float = 2.0,
    threshold: float = FIT_THRESHOLD,
    max_residual: float = MAX_RELATIVE_RESIDUAL,
    contiguous: bool = False,
) -> WidthEstimate:
    """Fit ``a exp(-power (x - c)^2 / w^2)`` to a sampled profile.

    ``power=2`` returns the 1/e^2 half-width of an intensity profile,
    ``power=1`` the 1/e half-width (the convention used for amplitudes and
    for the screen autocorrelation).

    Only samples above ``threshold * peak`` enter the unweighted least
    squares (the peak and its two neighbours are always kept). With
    ``contiguous`` the selection is further cut to the unbroken lobe around
    the peak, for profiles that fluctuate about zero away from it. If the
    RMS residual exceeds ``max_residual`` times the RMS of the fitted
    samples, or the fit does not converge, the second-moment width of the
    selected samples is returned.
    """
    prof = np.asarray(profile, dtype=float)
    if x is None:
        x = np.arange(prof.size) - prof.size // 2
    x = np.asarray(x, dtype=float)
    peak = prof.max() if prof.size else 0.0
    if not np.isfinite(peak) or peak <= 0:
        raise WidthFitError("profile has no positive peak")
    if np.ptp(prof) <= 1e-12 * abs(peak):
        raise WidthFitError("profile is flat; width undefined")

    ipk = int(np.argmax(prof))
    mask = prof > threshold * peak
    if contiguous:
        lo, hi = ipk, ipk
        while lo > 0 and mask[lo - 1]:
            lo -= 1
        while hi < prof.size - 1 and mask[hi + 1]:
            hi += 1
        mask[:] = False
        mask[lo : hi + 1] = True
    mask[max(ipk - 1, 0) : ipk + 2] = True
    if contiguous:
        mw, mu = moment_width(x[mask], prof[mask], power)
    else:
        mw, mu = moment_width(x, prof, power)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(
                lambda xx, a, w, c: _gauss(xx, a, w, c, power),
                x[mask],
                prof[mask],
                p0=[peak, max(mw, 0.5), x[ipk]],
                maxfev=4000,
            )
        a, w, c = popt
        w = abs(float(w))
        resid = _gauss(x[mask], a, w, c, power) - prof[mask]
        rel = float(np.sqrt(np.mean(resid**2)) / np.sqrt(np.mean(prof[mask] ** 2)))
        if np.isfinite(w) and w > 0 and rel <= max_residual:
            return WidthEstimate(w, float(c), "fit", rel)
    except (RuntimeError, ValueError):
        rel = float("inf")
    if not mw > 0:
        raise WidthFitError("profile is non-unimodal beyond tolerance; width undefined")
    return WidthEstimate(mw, mu, "moment", rel)

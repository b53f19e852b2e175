"""Coincidence matrices, marginals, correlation post-selection and shot noise.

Matrices are indexed ``[x_i, x_s]`` (idler first). Post-selection windows
are bin-exact: offset ``xi`` keeps the entries ``x_i = x_s + xi``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import BiphotonState, GridSpec, to_position

SAMPLE_CHUNK = 1 << 20


class Kind(enum.Enum):
    PROBABILITY = "probability"
    SAMPLED = "sampled"


class Marginal(enum.Enum):
    OVER_IDLER = "over_idler"  # Gamma_s(x_s) = sum_{x_i} Gamma
    OVER_SIGNAL = "over_signal"


class Label(enum.Enum):
    SINGLES = "singles"
    MARGINAL = "marginal"
    POST = "post"
    POST_SUM = "post_sum"
    TRUTH = "truth"


@dataclass(frozen=True)
class CoincidenceMatrix:
    grid: GridSpec
    counts: np.ndarray
    kind: Kind = Kind.PROBABILITY
    pair_count: int | None = None

    def __post_init__(self):
        M = self.grid.size
        c = np.asarray(self.counts)
        if c.shape != (M, M):
            raise ValueError(f"coincidence matrix must be {M}x{M}, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("coincidence counts must be nonnegative")
        if self.kind is Kind.PROBABILITY:
            c = c.astype(float)
            if abs(c.sum() - 1) > 1e-9:
                raise ValueError(f"probability matrix sums to {c.sum()!r}, expected 1")
        else:
            c = c.astype(np.int64)
            if self.pair_count is None:
                object.__setattr__(self, "pair_count", int(c.sum()))
            elif c.sum() != self.pair_count:
                raise ValueError("sampled matrix total does not match pair_count")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_probability(cls, grid: GridSpec, weights: np.ndarray) -> "CoincidenceMatrix":
        w = np.asarray(weights, dtype=float)
        return cls(grid, w / w.sum(), Kind.PROBABILITY)

    @classmethod
    def from_state(cls, state: BiphotonState) -> "CoincidenceMatrix":
        return cls.from_probability(state.grid, to_position(state).probability)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class ImageProfile:
    grid: GridSpec
    values: np.ndarray
    label: Label
    param: int | None = None  # offset xi for POST, n for POST_SUM

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.size,):
            raise ValueError("profile length does not match grid")
        if np.any(v < 0):
            raise ValueError("profile values must be nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def total(self) -> float:
        return float(self.values.sum())


def marginal(gamma: CoincidenceMatrix, which: Marginal = Marginal.OVER_IDLER) -> ImageProfile:
    axis = 0 if which is Marginal.OVER_IDLER else 1
    return ImageProfile(gamma.grid, gamma.counts.sum(axis=axis).astype(float), Label.MARGINAL)


def singles(obj) -> ImageProfile:
    """Signal-arm single-photon image of a state or probability matrix.

    With unit detection efficiency this is the signal marginal; sampled
    singles that include lost partners come from :func:`acquire`.
    """
    if isinstance(obj, BiphotonState):
        prob = to_position(obj).probability
        return ImageProfile(obj.grid, prob.sum(axis=0), Label.SINGLES)
    return ImageProfile(obj.grid, obj.counts.sum(axis=0).astype(float), Label.SINGLES)


def postselect(gamma: CoincidenceMatrix, xi: int) -> ImageProfile:
    """``Gamma_post(x; xi) = Gamma(x + xi, x)``; bins with ``x + xi`` off-grid are zero."""
    M = gamma.grid.size
    if abs(xi) >= M:
        raise ValueError(f"|xi| must be < M={M}")
    out = np.zeros(M)
    x = np.arange(max(0, -xi), min(M, M - xi))
    out[x] = gamma.counts[x + xi, x]
    return ImageProfile(gamma.grid, out, Label.POST, int(xi))


def window_offsets(n: int) -> range:
    """The ``n`` consecutive offsets of an n-window, centered on 0 (``n=6`` -> -2..3)."""
    return range(-((n - 1) // 2), n // 2 + 1)


def postselect_sum(gamma: CoincidenceMatrix, n: int) -> ImageProfile:
    """Sum of the ``n`` post-selected images, each read at ``x - xi``.

    ``out(x) = sum_xi Gamma_post(x - xi; xi) = sum_xi Gamma(x, x - xi)``,
    which registers every window on the idler coordinate.
    """
    M = gamma.grid.size
    if not 1 <= n <= max(1, M // 8):
        raise ValueError(f"n must satisfy 1 <= n <= M/8={M // 8}")
    out = np.zeros(M)
    for xi in window_offsets(n):
        img = postselect(gamma, xi).values
        shifted = np.zeros(M)
        if xi >= 0:
            shifted[xi:] = img[: M - xi]
        else:
            shifted[: M + xi] = img[-xi:]
        out += shifted
    return ImageProfile(gamma.grid, out, Label.POST_SUM, int(n))


def band_fraction(gamma: CoincidenceMatrix, n: int) -> float:
    """Fraction of the matrix total inside the n-window around the diagonal."""
    return float(sum(postselect(gamma, xi).total for xi in window_offsets(n)) / gamma.total)


def _chunked_multinomial(p: np.ndarray, N: int, seed: int, stream: int = 0) -> np.ndarray:
    counts = np.zeros(p.size, dtype=np.int64)
    for k, start in enumerate(range(0, N, SAMPLE_CHUNK)):
        size = min(SAMPLE_CHUNK, N - start)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), k])))
        counts += rng.multinomial(size, p)
    return counts


def _as_pvals(values: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(values, dtype=float).ravel(), 0, None)
    p = p / p.sum()
    # multinomial rejects sum(p[:-1]) > 1 from rounding
    p[-1] = max(0.0, 1.0 - p[:-1].sum())
    return p


def sample_pairs(gamma: CoincidenceMatrix, N: int, seed: int) -> CoincidenceMatrix:
    """Draw ``N`` pairs from the categorical distribution ``gamma``.

    Work is split into fixed chunks of ``SAMPLE_CHUNK`` pairs, each with its
    own Philox substream, so the result depends only on ``(N, seed)``.
    """
    if gamma.kind is not Kind.PROBABILITY:
        raise ValueError("sample_pairs needs a probability matrix")
    if N < 1:
        raise ValueError("pair budget N must be >= 1")
    counts = _chunked_multinomial(_as_pvals(gamma.counts), int(N), seed, stream=0)
    M = gamma.grid.size
    return CoincidenceMatrix(gamma.grid, counts.reshape(M, M), Kind.SAMPLED, int(N))


@dataclass(frozen=True)
class Acquisition:
    coincidences: CoincidenceMatrix
    singles: ImageProfile
    true_pairs: int
    accidental_pairs: int


def acquire(
    gamma: CoincidenceMatrix,
    singles_prob: ImageProfile,
    pairs: int,
    seed: int,
    efficiency: float = 1.0,
    accidentals: float = 0.0,
    background: float = 0.0,
    pair_transmission: float = 1.0,
    signal_transmission: float = 1.0,
) -> Acquisition:
    """Finite-budget acquisition of coincidences and signal singles.

    Of ``pairs`` emitted pairs, ``Binomial(pairs, T_pair * eta^2)`` are
    recorded as coincidences drawn from ``gamma`` and
    ``Binomial(pairs, T_signal * eta)`` signal photons are recorded as
    singles drawn from ``singles_prob``. ``accidentals`` (mean uniform
    accidental coincidences) and ``background`` (mean uniform singles) are
    Poisson.
    """
    if not 0 <= efficiency <= 1:
        raise ValueError("efficiency must lie in [0, 1]")
    M = gamma.grid.size
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 7])))
    n_true = int(rng.binomial(pairs, min(1.0, pair_transmission * efficiency**2)))
    n_single = int(rng.binomial(pairs, min(1.0, signal_transmission * efficiency)))
    n_acc = int(rng.poisson(accidentals)) if accidentals > 0 else 0
    n_bg = int(rng.poisson(background)) if background > 0 else 0

    counts = np.zeros(M * M, dtype=np.int64)
    if n_true:
        counts += _chunked_multinomial(_as_pvals(gamma.counts), n_true, seed, stream=1)
    if n_acc:
        counts += _chunked_multinomial(np.full(M * M, 1.0 / (M * M)), n_acc, seed, stream=2)
    s = np.zeros(M, dtype=np.int64)
    if n_single:
        s += _chunked_multinomial(_as_pvals(singles_prob.values), n_single, seed, stream=3)
    if n_bg:
        s += _chunked_multinomial(np.full(M, 1.0 / M), n_bg, seed, stream=4)
    coinc = CoincidenceMatrix(gamma.grid, counts.reshape(M, M), Kind.SAMPLED)
    return Acquisition(coinc, ImageProfile(gamma.grid, s.astype(float), Label.SINGLES), n_true, n_acc)


def log_kernel(sigma: float, ndim: int = 2) -> np.ndarray:
    """Sampled Laplacian-of-Gaussian, radius ``ceil(3 sigma)``, shifted to zero sum."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    r = math.ceil(3 * sigma)
    ax = np.arange(-r, r + 1, dtype=float)
    grids = np.meshgrid(*([ax] * ndim), indexing="ij")
    r2 = sum(g**2 for g in grids)
    g = np.exp(-r2 / (2 * sigma**2))
    k = (r2 - ndim * sigma**2) / sigma**4 * g
    k /= g.sum()
    return k - k.mean()


def laplacian_gaussian_filter(image: np.ndarray, sigma: float) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    return ndimage.convolve(img, log_kernel(sigma, img.ndim), mode="constant", cval=0.0)


def save_matrix_dense(path, gamma: CoincidenceMatrix) -> None:
    fmt = "%.17g" if gamma.kind is Kind.PROBABILITY else "%d"
    np.savetxt(path, gamma.counts, fmt=fmt, delimiter=",")


def save_matrix_sparse(path, gamma: CoincidenceMatrix) -> None:
    """Triplet text: ``# M=<size> kind=<kind>`` header, then ``row,col,count`` lines."""
    rows, cols = np.nonzero(gamma.counts)
    with open(path, "w") as fh:
        fh.write(f"# M={gamma.grid.size} kind={gamma.kind.value}\n")
        for r, c in zip(rows, cols):
            v = gamma.counts[r, c]
            fh.write(f"{r},{c},{v:.17g}\n" if gamma.kind is Kind.PROBABILITY else f"{r},{c},{v}\n")


def load_matrix_sparse(path) -> CoincidenceMatrix:
    lines = Path(path).read_text().splitlines()
    header = dict(tok.split("=") for tok in lines[0].lstrip("# ").split())
    M = int(header["M"])
    kind = Kind(header["kind"])
    counts = np.zeros((M, M))
    for line in lines[1:]:
        if line.strip():
            r, c, v = line.split(",")
            counts[int(r), int(c)] = float(v)
    return CoincidenceMatrix(GridSpec(M), counts, kind)


def load_matrix_dense(path, kind: Kind = Kind.PROBABILITY) -> CoincidenceMatrix:
    counts = np.loadtxt(path, delimiter=",", ndmin=2)
    return CoincidenceMatrix(GridSpec(counts.shape[0]), counts, kind)


def save_profile(path, profile: ImageProfile) -> None:
    np.savetxt(path, np.column_stack([profile.grid.coords, profile.values]), fmt="%.17g", delimiter=",")

"""Config-driven simulations, sweeps and event-stream runs.

A run is described by a :class:`RunConfig` read from an INI file. Sweep
points and repeats are independent jobs; every job derives its random
streams from ``(seed, repeat)`` only, so results do not depend on the
worker count or on scheduling order.
"""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import events as ev
from .coincidence import (
    CoincidenceMatrix,
    ImageProfile,
    acquire,
    laplacian_gaussian_filter,
    marginal,
    postselect_sum,
    save_matrix_dense,
    save_profile,
)
from .grid import make_grid
from .metrics import (
    MetricsReport,
    NoScatteringError,
    correlation_width,
    estimate_strength,
    mtf,
    rms,
    validate_broadening_law,
)
from .pipeline import (
    Configuration,
    ObjectMask,
    PipelineConfig,
    aperture_array,
    ground_truth,
    lines_object,
    object_from_file,
    run_ensemble,
)
from .screens import (
    ScreenParams,
    calibrated_width,
    generate_screen,
    save_screen,
    segments_for_strength,
)
from .source import SourceParams

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(section: str, parse: Callable | None = None):
    return {"section": section, "parse": parse}


@dataclass(frozen=True)
class RunConfig:
    # grid / source
    size: int = field(default=512, metadata=_opt("grid"))
    pitch: float = field(default=1.0, metadata=_opt("grid"))
    w_q_fraction: float = field(default=0.2, metadata=_opt("source"))
    entanglement: float = field(default=50.0, metadata=_opt("source"))
    strict_sampling: bool = field(default=True, metadata=_opt("source", _bool))
    # object
    object: str = field(default="apertures", metadata=_opt("object"))
    period: int = field(default=32, metadata=_opt("object"))
    duty: float = field(default=0.5, metadata=_opt("object"))
    line_count: int = field(default=3, metadata=_opt("object"))
    line_width: int = field(default=8, metadata=_opt("object"))
    line_gap: int = field(default=16, metadata=_opt("object"))
    object_path: str = field(default="", metadata=_opt("object"))
    # scattering
    configuration: str = field(default="both", metadata=_opt("scatter"))
    realizations: int = field(default=100, metadata=_opt("scatter"))
    strength: float = field(default=5.0, metadata=_opt("scatter"))
    screens_before: bool = field(default=True, metadata=_opt("scatter", _bool))
    screens_after: bool = field(default=True, metadata=_opt("scatter", _bool))
    throughput_weighting: bool = field(default=True, metadata=_opt("scatter", _bool))
    # sweeps
    strengths: tuple = field(default=(1.0, 2.0, 5.0, 10.0, 20.0), metadata=_opt("sweep", _floats))
    entanglements: tuple = field(default=(10.0, 20.0, 30.0, 40.0, 50.0), metadata=_opt("sweep", _floats))
    repeats: int = field(default=5, metadata=_opt("sweep"))
    n_list: tuple = field(default=(1, 3, 6), metadata=_opt("sweep", _ints))
    # finite acquisition (pairs = 0 means exact probabilities)
    pairs: int = field(default=0, metadata=_opt("sampling"))
    efficiency: float = field(default=1.0, metadata=_opt("sampling"))
    accidentals: float = field(default=0.0, metadata=_opt("sampling"))
    background: float = field(default=0.0, metadata=_opt("sampling"))
    # broadening validation
    broadening_size: int = field(default=128, metadata=_opt("broadening"))
    broadening_entanglement: float = field(default=15.0, metadata=_opt("broadening"))
    broadening_realizations: int = field(default=40, metadata=_opt("broadening"))
    broadening_strengths: tuple = field(default=(1.0, 2.0, 3.0, 5.0, 7.0, 10.0), metadata=_opt("broadening", _floats))
    # screen calibration
    segments: tuple = field(default=(4, 8, 16, 32, 64, 128), metadata=_opt("calibration", _ints))
    # event streams
    event_size: int = field(default=64, metadata=_opt("events"))
    event_w_q: float = field(default=24.0, metadata=_opt("events"))
    event_entanglement: float = field(default=10.0, metadata=_opt("events"))
    event_strength: float = field(default=0.0, metadata=_opt("events"))
    event_realizations: int = field(default=20, metadata=_opt("events"))
    event_period: int = field(default=8, metadata=_opt("events"))
    rate: float = field(default=1e5, metadata=_opt("events"))
    eta: float = field(default=1.0, metadata=_opt("events"))
    accidental_rate: float = field(default=0.0, metadata=_opt("events"))
    duration: float = field(default=1.0, metadata=_opt("events"))
    jitter: float = field(default=0.0, metadata=_opt("events"))
    window: int = field(default=10, metadata=_opt("events"))
    resolution: int = field(default=7, metadata=_opt("events"))
    frame_length: int = field(default=0, metadata=_opt("events"))
    event_format: str = field(default="text", metadata=_opt("events"))
    event_input: str = field(default="", metadata=_opt("events"))
    log_sigma: float = field(default=0.0, metadata=_opt("events"))
    # run
    seed: int = field(default=0, metadata=_opt("run"))
    workers: int = field(default=1, metadata=_opt("run"))
    png: bool = field(default=False, metadata=_opt("run", _bool))  # PNG copies of the PGM images (needs Pillow)

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        for name in ("strengths", "entanglements", "n_list", "broadening_strengths", "segments"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be a nonempty list")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if self.configuration not in {c.value for c in Configuration}:
            raise ConfigError(f"unknown configuration {self.configuration!r}")
        if self.object not in ("apertures", "lines", "file"):
            raise ConfigError(f"unknown object kind {self.object!r}")
        if self.event_format not in ("text", "binary"):
            raise ConfigError("event_format must be text or binary")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.pairs < 0:
            raise ConfigError("pairs must be >= 0")

    @property
    def w_q(self) -> float:
        return self.w_q_fraction * self.size


def load_config(path=None, overrides: dict | None = None, base: RunConfig | None = None) -> RunConfig:
    """Read ``[section] key = value`` pairs onto the defaults of ``base``."""
    cfg = base or RunConfig()
    values = {}
    known = {f.name: f for f in fields(RunConfig)}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                f = known.get(key)
                if f is None or f.metadata["section"] != section:
                    raise ConfigError(f"{path}: unknown key [{section}] {key}")
                values[key] = _convert(f, raw)
    values.update(overrides or {})
    try:
        return replace(cfg, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _convert(f, raw: str):
    parse = f.metadata.get("parse")
    try:
        if parse is not None:
            return parse(raw)
        if f.type in ("int", int):
            return int(raw)
        if f.type in ("float", float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {f.name}: {raw!r} ({exc})") from exc


def config_snapshot(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for f in fields(RunConfig):
        sec = f.metadata["section"]
        if not parser.has_section(sec):
            parser.add_section(sec)
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        parser.set(sec, f.name, str(v))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------- building blocks

def build_object(cfg: RunConfig, grid) -> ObjectMask:
    if cfg.object == "apertures":
        return aperture_array(grid, cfg.period, cfg.duty)
    if cfg.object == "lines":
        return lines_object(grid, cfg.line_count, cfg.line_width, cfg.line_gap)
    return object_from_file(cfg.object_path, grid)


def job_seed(seed: int, repeat: int) -> int:
    """Screen seed of one repeat; shared by every point of a sweep."""
    return int(np.random.SeedSequence([int(seed), int(repeat)]).generate_state(1, np.uint64)[0])


def pipeline_config(cfg: RunConfig, strength: float | None = None, entanglement: float | None = None,
                    repeat: int = 0, segments: int | None = None) -> PipelineConfig:
    grid = make_grid(cfg.size, cfg.pitch)
    src = SourceParams.from_ratio(cfg.w_q, cfg.entanglement if entanglement is None else entanglement)
    conf = Configuration(cfg.configuration)
    static = conf is Configuration.STATIC_AFTER_OBJECT
    strength = cfg.strength if strength is None else strength
    screen = None
    if strength > 0:
        S = segments if segments is not None else segments_for_strength(grid, src.w_q, strength)
        screen = ScreenParams(S, 1 if static else cfg.realizations, job_seed(cfg.seed, repeat))
    return PipelineConfig(
        grid, src, build_object(cfg, grid), screen, conf,
        screens_before=cfg.screens_before and not static,
        screens_after=cfg.screens_after,
        throughput_weighting=cfg.throughput_weighting,
        strict=cfg.strict_sampling,
    )


@dataclass(frozen=True)
class Images:
    truth: ImageProfile
    singles: ImageProfile
    marginal: ImageProfile
    post: dict  # n -> ImageProfile
    gamma: CoincidenceMatrix
    throughput: float


def reconstruct(pc: PipelineConfig, cfg: RunConfig, repeat: int = 0) -> Images:
    ens = run_ensemble(pc, with_singles=True)
    gamma = ens.gamma
    singles = ens.singles
    if cfg.pairs > 0:
        acq = acquire(gamma, singles, cfg.pairs, job_seed(cfg.seed ^ 0xA5A5, repeat), cfg.efficiency,
                      cfg.accidentals, cfg.background, ens.mean_throughput, ens.mean_signal_throughput)
        gamma = acq.coincidences
        singles = acq.singles
    post = {n: postselect_sum(gamma, n) for n in sorted(set(cfg.n_list) | {1})}
    return Images(ground_truth(pc), singles, marginal(gamma), post, gamma, ens.mean_throughput)


def _metric_pair(img: ImageProfile, truth: ImageProfile) -> tuple[float, float]:
    if img.total <= 0:
        return float("nan"), float("nan")
    return mtf(img.values, truth.values)[0], rms(img.values, truth.values)


def image_metrics(im: Images) -> dict:
    out = {}
    for name, img in [("singles", im.singles), ("marginal", im.marginal)] + \
            [(f"post_n{n}", p) for n, p in im.post.items()]:
        out[f"mtf_{name}"], out[f"rms_{name}"] = _metric_pair(img, im.truth)
    out["mtf_post"] = out["mtf_post_n1"]
    out["enhancement"] = out["mtf_post"] / out["mtf_marginal"]
    return out


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class Job:
    cfg: RunConfig
    axis: str
    value: float
    repeat: int
    segments: int | None


def run_job(job: Job) -> dict:
    cfg = job.cfg
    if job.axis == "strength":
        pc = pipeline_config(cfg, strength=job.value, repeat=job.repeat, segments=job.segments)
    else:
        pc = pipeline_config(cfg, entanglement=job.value, repeat=job.repeat, segments=job.segments)
    im = reconstruct(pc, cfg, job.repeat)
    row = {job.axis: job.value, "repeat": job.repeat}
    if pc.screen is not None:
        row["segments"] = pc.screen.segments
        row["w_q_over_w_A"] = pc.source.w_q / calibrated_width(cfg.size, pc.screen.segments)
    else:
        row["segments"] = 0
        row["w_q_over_w_A"] = 0.0
    row.update(image_metrics(im))
    row["throughput"] = im.throughput
    return row


def run_jobs(jobs: Sequence[Job], workers: int = 1) -> list[dict]:
    """Evaluate jobs on a bounded pool; results come back in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(run_job, jobs))


def sweep_jobs(cfg: RunConfig, axis: str) -> list[Job]:
    grid = make_grid(cfg.size, cfg.pitch)
    jobs = []
    if axis == "strength":
        for s in cfg.strengths:
            S = segments_for_strength(grid, cfg.w_q, s) if s > 0 else None
            jobs += [Job(cfg, axis, float(s), r, S) for r in range(cfg.repeats)]
    else:
        S = segments_for_strength(grid, cfg.w_q, cfg.strength) if cfg.strength > 0 else None
        for e in cfg.entanglements:
            jobs += [Job(cfg, axis, float(e), r, S) for r in range(cfg.repeats)]
    return jobs


def aggregate(rows: list[dict], axis: str) -> list[dict]:
    """One aggregate row per sweep value: mean, std (ddof=1) and standard error."""
    out = []
    values = list(dict.fromkeys(r[axis] for r in rows))
    for v in values:
        grp = [r for r in rows if r[axis] == v]
        agg = {axis: v, "repeat": "all", "row": "aggregate"}
        for key in grp[0]:
            if key in (axis, "repeat", "row"):
                continue
            x = np.array([g[key] for g in grp], dtype=float)
            agg[key] = float(x.mean())
            sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
            agg[f"std_{key}"] = sd
            agg[f"sem_{key}"] = sd / math.sqrt(x.size)
        out.append(agg)
    return out


def sweep(cfg: RunConfig, axis: str) -> tuple[list[dict], list[dict]]:
    rows = run_jobs(sweep_jobs(cfg, axis), cfg.workers)
    for r in rows:
        r["row"] = "raw"
    return rows, aggregate(rows, axis)


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    keys = list(dict.fromkeys(k for r in rows for k in r))
    front = [k for k in ("row", "strength", "entanglement", "repeat") if k in keys]
    keys = front + [k for k in keys if k not in front]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for r in rows:
        w.writerow([format_value(r.get(k, "")) for k in keys])
    return buf.getvalue()


# ---------------------------------------------------------------- images

def to_gray(img: np.ndarray, rows: int = 32) -> np.ndarray:
    a = np.asarray(img, dtype=float)
    if a.ndim == 1:
        a = np.repeat(a[None, :], rows, axis=0)
    lo, hi = a.min(), a.max()
    scaled = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    return np.round(scaled * 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    g = to_gray(img)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode())
        fh.write(g.tobytes())


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image  # optional dependency

    Image.fromarray(to_gray(img)).save(path)


def write_images(stem: Path, img: np.ndarray, png: bool = False) -> None:
    write_pgm(stem.with_suffix(".pgm"), img)
    if png:
        write_png(stem.with_suffix(".png"), img)


# ---------------------------------------------------------------- commands

def _out(out: Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(cfg: RunConfig, out: Path) -> None:
    (out / "resolved-config.ini").write_text(config_snapshot(cfg))


def _report(img: ImageProfile, truth: ImageProfile, w_minus=float("nan"), w_minus_0=float("nan"),
            strength=float("nan")) -> MetricsReport:
    m, k0 = mtf(img.values, truth.values)
    return MetricsReport(m, rms(img.values, truth.values), k0, w_minus, w_minus_0, strength)


def cmd_simulate(cfg: RunConfig, out) -> dict:
    out = _out(out)
    _write_snapshot(cfg, out)
    pc = pipeline_config(cfg)
    im = reconstruct(pc, cfg)
    conf = pc.configuration
    w0 = correlation_width(run_ensemble(pc.without_scattering(), with_singles=False).gamma)
    w = correlation_width(im.gamma.counts)
    est = float("nan")
    if conf is not Configuration.STATIC_AFTER_OBJECT:
        try:
            est = estimate_strength(w, w0, conf)
        except NoScatteringError as exc:
            log.info("%s", exc)
    save_matrix_dense(out / "gamma.csv", im.gamma)
    images = {"truth": im.truth, "singles": im.singles, "marginal": im.marginal}
    images.update({f"post_n{n}": p for n, p in im.post.items()})
    blocks = []
    if conf is Configuration.STATIC_AFTER_OBJECT:
        blocks.append("flag = static\n")
    summary = {}
    for name, img in images.items():
        save_profile(out / f"{name}.csv", img)
        write_images(out / name, img.values, cfg.png)
        rep = _report(img, im.truth, w, w0, est)
        blocks.append(f"[{name}]\n{rep.as_text()}")
        summary[name] = rep
    (out / "metrics.txt").write_text("\n".join(blocks))
    return summary


def cmd_sweep(cfg: RunConfig, out, axis: str) -> list[dict]:
    out = _out(out)
    _write_snapshot(cfg, out)
    rows, agg = sweep(cfg, axis)
    name = "sweep_scatter.csv" if axis == "strength" else "sweep_entanglement.csv"
    (out / name).write_text(rows_to_csv(rows + agg))
    return rows + agg


def cmd_validate_broadening(cfg: RunConfig, out) -> list:
    out = _out(out)
    _write_snapshot(cfg, out)
    table = validate_broadening_law(cfg.broadening_strengths, M=cfg.broadening_size,
                                    realizations=cfg.broadening_realizations, seed=cfg.seed,
                                    entanglement=cfg.broadening_entanglement)
    rows = [{"configuration": t.configuration, "target_strength": t.target_strength, "segments": t.segments,
             "strength": t.strength, "measured_ratio": t.measured_ratio, "predicted_ratio": t.predicted_ratio,
             "relative_error": t.relative_error} for t in table]
    (out / "broadening.csv").write_text(rows_to_csv(rows))
    return table


def cmd_calibrate_screens(cfg: RunConfig, out) -> list[dict]:
    out = _out(out)
    _write_snapshot(cfg, out)
    grid = make_grid(cfg.size, cfg.pitch)
    rows = []
    for S in cfg.segments:
        w_A = calibrated_width(cfg.size, S)
        rows.append({"segments": S, "w_A": w_A, "w_q_over_w_A": cfg.w_q / w_A})
        save_screen(out / f"screen_S{S}.txt", generate_screen(grid, ScreenParams(S, 1, cfg.seed), 0))
    (out / "calibration.csv").write_text(rows_to_csv(rows))
    return rows


# ---------------------------------------------------------------- event-stream commands

def event_model(cfg: RunConfig, repeat: int = 0) -> tuple[ev.ProductModel, np.ndarray]:
    """Product model: the object along x, a clear aperture along y. Returns the model and 2D truth."""
    ecfg = replace(cfg, size=cfg.event_size, w_q_fraction=cfg.event_w_q / cfg.event_size,
                   entanglement=cfg.event_entanglement, strict_sampling=False,
                   realizations=cfg.event_realizations, pairs=0,
                   period=cfg.event_period)
    px = pipeline_config(ecfg, strength=cfg.event_strength, repeat=repeat)
    py = replace(px, obj=replace(px.obj, transmission=np.ones(cfg.event_size), descriptor="clear"))
    gx = run_ensemble(px, with_singles=False).gamma
    gy = run_ensemble(py, with_singles=False).gamma
    truth = np.outer(ground_truth(py).values, ground_truth(px).values)
    return ev.ProductModel(gx, gy), truth


def synth_stream(cfg: RunConfig) -> tuple[ev.EventStream, np.ndarray]:
    model, truth = event_model(cfg)
    span = int(round(cfg.duration * 1e9))
    stream = ev.synthesize_stream(model, cfg.rate, cfg.eta, cfg.accidental_rate, cfg.duration, cfg.jitter,
                                  cfg.seed, cfg.frame_length or span, cfg.resolution)
    return stream, truth


def cmd_events_synth(cfg: RunConfig, out) -> Path:
    out = _out(out)
    _write_snapshot(cfg, out)
    stream, truth = synth_stream(cfg)
    if cfg.event_format == "binary":
        path = out / "events.bin"
        ev.write_events_binary(path, stream)
    else:
        path = out / "events.txt"
        ev.write_events_text(path, stream)
    np.savetxt(out / "truth.csv", truth, fmt="%.17g", delimiter=",")
    return path


@dataclass(frozen=True)
class EventImages:
    singles: np.ndarray
    marginal: np.ndarray
    post: dict
    corr: ev.Corr4D
    pairs: ev.Pairs


def analyze_stream(stream: ev.EventStream, n_list: Sequence[int], window: int) -> EventImages:
    pairs = ev.pair_events(stream, window)
    corr = ev.accumulate_corr4d(pairs)
    post = {n: ev.postselect_sum_2d(corr, n) for n in n_list}
    return EventImages(ev.singles_image(stream, ev.ROI_A), ev.marginal_2d(corr), post, corr, pairs)


def correlation_width_2d(corr: ev.Corr4D, radius: int = 8) -> float:
    from .fitting import gaussian_width

    prof = ev.correlation_profile_2d(corr, radius)
    return gaussian_width(prof.sum(axis=0), x=np.arange(-radius, radius + 1), power=2.0).width


def cmd_events_analyze(cfg: RunConfig, out) -> dict:
    out = _out(out)
    _write_snapshot(cfg, out)
    src = Path(cfg.event_input) if cfg.event_input else out / ("events.bin" if cfg.event_format == "binary" else "events.txt")
    stream = ev.read_events(src)
    _, truth = event_model(cfg)
    res = analyze_stream(stream, cfg.n_list, cfg.window)
    images = {"singles": res.singles, "marginal": res.marginal}
    images.update({f"post_n{n}": p for n, p in res.post.items()})
    if cfg.log_sigma > 0:
        images.update({f"{k}_log": laplacian_gaussian_filter(v, cfg.log_sigma) for k, v in list(images.items())})
    rows = []
    for name, img in images.items():
        np.savetxt(out / f"{name}.csv", img, fmt="%.17g", delimiter=",")
        write_images(out / name, img, cfg.png)
        if name.endswith("_log"):
            continue
        m, k0 = mtf(img, truth) if img.sum() > 0 else (float("nan"), float("nan"))
        r = rms(img, truth) if img.sum() > 0 else float("nan")
        rows.append({"image": name, "counts": int(img.sum()), "mtf": m, "rms": r, "k0": k0})
    width = correlation_width_2d(res.corr) if res.corr.total else float("nan")
    (out / "events_metrics.csv").write_text(rows_to_csv(rows))
    (out / "pairs.txt").write_text(f"pairs = {len(res.pairs)}\ncorrelation_width = {width!r}\n")
    return {"rows": rows, "pairs": len(res.pairs), "correlation_width": width}

"""Config-driven acceleration sweep and b-ablation with CSV, manifest and grid outputs."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .cg import CgConfig, NumericalFailure
from .gridio import write_grid
from .guidance import BoundsResult, bounded_reconstruct
from .metrics import BoundsMetrics, aggregate, precision, psnr, recall, ssim, uncertainty_volume, write_summary
from .operators import forward, make_mask
from .phantom import build_prior, default_phantom_spec, generate_phantom
from .rr_baseline import bounds_from_samples, draw_samples
from .sampler import make_schedule
from .segmenter import SegmenterParams, params_from_spec, segment

log = logging.getLogger(__name__)

__all__ = [
    "PhantomConfig",
    "PriorConfig",
    "ScheduleConfig",
    "SegmenterConfig",
    "ExperimentConfig",
    "hash64",
    "load_config",
    "config_to_dict",
    "config_from_dict",
    "apply_env_overrides",
    "run_experiment",
    "run_b_ablation",
    "RunResult",
    "METHODS",
    "FAILURE_LIMIT",
]

METHODS = ("SGR", "RR")
FAILURE_LIMIT = 0.05
ENV_PREFIX = "SGR_"


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 64
    jitter_scale: float = 1.0
    voxel_volume: float = 1.0


@dataclass(frozen=True)
class PriorConfig:
    n_templates: int = 400
    variance: float = 5e-3


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02
    eta: float = 0.5
    train_steps: int = 1000


@dataclass(frozen=True)
class SegmenterConfig:
    sharpness: float = 100.0
    smoothing: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    cg: CgConfig = field(default_factory=CgConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    accelerations: tuple = (4.0, 8.0, 12.0, 16.0)
    methods: tuple = METHODS
    classes: tuple = (1, 2)
    n_rr: int = 16
    b: float = 0.005
    b_values: tuple = (0.001, 0.005, 0.02)
    ablation_acceleration: float = 16.0
    n_phantoms: int = 50
    seed: int = 0
    out: str = "runs/sweep"
    emit_images: bool = False
    step_logs: bool = False
    jobs: int = 1

    def __post_init__(self):
        for name in ("accelerations", "methods", "classes", "b_values"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "accelerations", tuple(float(a) for a in self.accelerations))
        if not self.accelerations:
            raise ValueError("accelerations must be nonempty")
        if not self.methods or not set(self.methods) <= set(METHODS):
            raise ValueError(f"methods must be a nonempty subset of {METHODS}")
        if self.n_phantoms < 1:
            raise ValueError("n_phantoms must be >= 1")
        if self.n_rr < 2:
            raise ValueError("n_rr must be >= 2")
        if not self.classes:
            raise ValueError("classes must be nonempty")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


# ---------------------------------------------------------------- config I/O


def config_to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = config_to_dict(v) if is_dataclass(v) else (list(v) if isinstance(v, tuple) else v)
    return out


def config_from_dict(data: dict, cls=ExperimentConfig):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = cls.__dataclass_fields__[name].default_factory
        sub = default() if callable(default) else None
        if is_dataclass(sub):
            if not isinstance(value, dict):
                raise ValueError(f"{name} must be a mapping")
            kwargs[name] = config_from_dict(value, type(sub))
        else:
            kwargs[name] = value
    return cls(**kwargs)


def apply_env_overrides(data: dict, environ=None) -> dict:
    """``SGR_SCHEDULE__ETA=0.3`` sets ``schedule.eta``; values are parsed as YAML scalars."""
    environ = os.environ if environ is None else environ
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"{key}: {part} is not a section")
        node[path[-1]] = yaml.safe_load(environ[key])
    return data


def load_config(path=None, environ=None, **overrides) -> ExperimentConfig:
    """Read a YAML config (or a run manifest, which nests it under ``config``), then env and keyword overrides."""
    data = {}
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if "config" in data and "decisions" in data:
            data = data["config"]
    data = apply_env_overrides(data, environ)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)


# ---------------------------------------------------------------- seeding


def hash64(*parts) -> int:
    """64-bit seed from a tuple of ints and labels (blake2b over a fixed packing)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            b = p.encode()
            h.update(b"s" + struct.pack("<Q", len(b)) + b)
        else:
            h.update(b"i" + struct.pack("<Q", int(p) % 2**64))
    return struct.unpack("<Q", h.digest())[0]


def chain_seed(master: int, phantom: int, acc_idx: int, method_idx: int, chain: int) -> int:
    return hash64(master, phantom, acc_idx, method_idx, chain)


# ---------------------------------------------------------------- setup


@dataclass(frozen=True, eq=False)
class Setup:
    spec: object
    prior: object
    schedule: object
    params: SegmenterParams


_SETUP_CACHE: dict = {}


def build_setup(cfg: ExperimentConfig) -> Setup:
    key = (cfg.phantom, cfg.prior, cfg.schedule, cfg.segmenter, cfg.seed)
    if key in _SETUP_CACHE:
        return _SETUP_CACHE[key]
    spec = default_phantom_spec(cfg.phantom.size, cfg.phantom.jitter_scale)
    spec = replace(spec, voxel_volume=cfg.phantom.voxel_volume)
    templates = [generate_phantom(spec, hash64(cfg.seed, "template", k)) for k in range(cfg.prior.n_templates)]
    prior = build_prior(templates, cfg.prior.variance)
    s = cfg.schedule
    schedule = make_schedule(s.T, s.beta_min, s.beta_max, s.eta, train_steps=s.train_steps)
    kernel = np.full((3, 3), 1.0 / 9.0) if cfg.segmenter.smoothing else None
    params = params_from_spec(spec, cfg.segmenter.sharpness, kernel)
    setup = Setup(spec, prior, schedule, params)
    _SETUP_CACHE.clear()
    _SETUP_CACHE[key] = setup
    return setup


# ---------------------------------------------------------------- cells


@dataclass(frozen=True)
class Cell:
    phantom: int
    acc_idx: int
    method: str  # "SGR", "RR" or an ablation label like "SGR(b=0.005)"
    method_idx: int
    b: float


@dataclass
class CellOutput:
    cell: Cell
    records: list = field(default_factory=list)
    step_rows: list = field(default_factory=list)
    images: dict = field(default_factory=dict)
    error: str | None = None


def _metrics(cell, acc, res: BoundsResult, truth_img, truth_seg) -> BoundsMetrics:
    c = res.class_index
    truth = truth_seg == c
    v_unc, ratio = uncertainty_volume(res.v_upper, res.v_lower)
    if v_unc < 0:
        log.warning("inverted bounds: phantom %d acc %g %s class %d", cell.phantom, acc, cell.method, c)
    return BoundsMetrics(
        method=cell.method,
        acceleration=acc,
        class_index=c,
        precision_lower=precision(res.seg_lower == c, truth),
        recall_upper=recall(res.seg_upper == c, truth),
        v_unc_ratio=ratio,
        ssim_lower=ssim(res.x_lower, truth_img),
        ssim_upper=ssim(res.x_upper, truth_img),
        psnr_lower=psnr(res.x_lower, truth_img),
        psnr_upper=psnr(res.x_upper, truth_img),
        v_unc=v_unc,
        phantom=cell.phantom,
    )


def ground_truth(cfg: ExperimentConfig, setup: Setup, phantom: int):
    return generate_phantom(setup.spec, hash64(cfg.seed, "phantom", phantom))


def run_cell(cfg: ExperimentConfig, cell: Cell) -> CellOutput:
    out = CellOutput(cell)
    start = time.perf_counter()
    try:
        setup = build_setup(cfg)
        acc = cfg.accelerations[cell.acc_idx] if cell.acc_idx >= 0 else cfg.ablation_acceleration
        truth = ground_truth(cfg, setup, cell.phantom)
        mask = make_mask(truth.image.shape[1], acc, seed=hash64(cfg.seed, "mask", cell.phantom, cell.acc_idx))
        y = forward(truth.image, mask)
        truth_seg = segment(truth.image, setup.params)
        vv = setup.spec.voxel_volume
        if cell.method == "RR":
            seed = chain_seed(cfg.seed, cell.phantom, cell.acc_idx, cell.method_idx, 0)
            images = draw_samples(y, setup.prior, setup.schedule, cfg.cg, cfg.n_rr, seed)
            results = [bounds_from_samples(images, setup.params, c, vv) for c in cfg.classes]
        else:
            results = []
            for c in cfg.classes:
                logs = {} if cfg.step_logs else None
                res = bounded_reconstruct(
                    y, setup.prior, setup.schedule, cfg.cg, setup.params, c,
                    seed=chain_seed(cfg.seed, cell.phantom, cell.acc_idx, cell.method_idx, 2 * c),
                    lower_seed=chain_seed(cfg.seed, cell.phantom, cell.acc_idx, cell.method_idx, 2 * c + 1),
                    b=cell.b, voxel_volume=vv, step_logs=logs,
                )
                results.append(res)
                if logs:
                    for direction, recs in logs.items():
                        for r in recs:
                            out.step_rows.append(
                                (cell.phantom, acc, cell.method, c, direction, r.t, r.loss, r.grad_norm, r.eps_norm, r.gamma, int(r.clipped))
                            )
        for res in results:
            out.records.append(_metrics(cell, acc, res, truth.image, truth_seg))
            if cfg.emit_images:
                out.images[res.class_index] = (res.x_lower, res.x_upper, res.seg_lower, res.seg_upper)
        if cfg.emit_images:
            out.images["truth"] = (truth.image, truth_seg)
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("cell %s failed: %s", cell, exc)
        out.error = f"{type(exc).__name__}: {exc}"
    log.info("phantom %d acc_idx %d %s: %.1fs", cell.phantom, cell.acc_idx, cell.method, time.perf_counter() - start)
    return out


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    out_dir: Path
    records: list
    failed_cells: list
    n_cells: int

    @property
    def failure_rate(self) -> float:
        return len(self.failed_cells) / self.n_cells if self.n_cells else 0.0

    @property
    def exit_code(self) -> int:
        return 1 if self.failure_rate > FAILURE_LIMIT else 0


METRICS_HEADER = ("phantom", "acc", "method", "class", "metric", "value")
STEP_HEADER = ("phantom", "acc", "method", "class", "direction", "t", "loss", "grad_norm", "eps_norm", "gamma", "clipped")

DECISIONS = {
    "mask": "random columns with a centered ACS block, round(W/acc) kept",
    "real_image_convention": "known k-space set is the sampled columns plus their Hermitian mirrors",
    "data_consistency": "CG on the normal equations each step, exact projection at the final step",
    "guidance_target": "masked BCE bound loss on the Tweedie estimate, gradient through the mixture Jacobian",
    "guidance_at_t1": "skipped, its DDIM coefficient is zero",
    "gamma_clip": "gamma = b*|eps|/|grad| if |grad| > b*|eps| else 1",
    "sgr_chain_seeds": "upper 2c, lower 2c+1 within the cell stream",
    "rr_chain_seeds": "base + i for i < n_rr",
    "seed_formula": "blake2b-64 over (master, phantom, acc_idx, method_idx, chain)",
    "ablation_seeds": "every b value reuses the SGR seed stream, so chains are paired across b",
    "percentiles": "median is the midpoint average, p25 and p75 nearest-rank",
    "ssim": "11x11 Gaussian window sigma 1.5, K1 0.01, K2 0.03, range from the reference",
}


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _metric_rows(records):
    rows = []
    for r in records:
        for name in ("precision_lower", "recall_upper", "v_unc_ratio", "v_unc", "ssim_lower", "ssim_upper", "psnr_lower", "psnr_upper"):
            rows.append((r.phantom, r.acceleration, r.method, r.class_index, name, getattr(r, name)))
    rows.sort(key=lambda row: row[:5])
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_images(out_dir: Path, outputs):
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for o in outputs:
        cell = o.cell
        tag = f"p{cell.phantom:03d}_a{cell.acc_idx}_{cell.method}"
        for key, arrays in o.images.items():
            if key == "truth":
                write_grid(img_dir / f"p{cell.phantom:03d}_a{cell.acc_idx}_truth_image.grid", arrays[0])
                write_grid(img_dir / f"p{cell.phantom:03d}_a{cell.acc_idx}_truth_seg.grid", arrays[1].astype(float))
                continue
            names = ("x_lower", "x_upper", "seg_lower", "seg_upper")
            for name, arr in zip(names, arrays):
                write_grid(img_dir / f"{tag}_c{key}_{name}.grid", np.asarray(arr, dtype=float))


def _execute(cfg: ExperimentConfig, cells, kind: str) -> RunResult:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outputs = list(pool.map(run_cell, [cfg] * len(cells), cells, chunksize=1))
    else:
        outputs = [run_cell(cfg, cell) for cell in cells]
    records = [r for o in outputs for r in o.records]
    failed = [o.cell for o in outputs if o.error is not None]
    _write_csv(out_dir / "metrics.csv", METRICS_HEADER, _metric_rows(records))
    if records:
        write_summary(aggregate(records), out_dir / "summary.csv")
    if cfg.step_logs:
        steps = sorted((row for o in outputs for row in o.step_rows), key=lambda r: r[:6])
        _write_csv(out_dir / "steps.csv", STEP_HEADER, steps)
    if cfg.emit_images:
        _write_images(out_dir, outputs)
    manifest = {
        "kind": kind,
        "config": config_to_dict(cfg),
        "decisions": DECISIONS,
        "cells": len(cells),
        "failed_cells": [f"phantom={c.phantom} acc_idx={c.acc_idx} method={c.method}" for c in failed],
    }
    (out_dir / "run_manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))
    result = RunResult(out_dir, records, failed, len(cells))
    if result.exit_code:
        log.error("%d of %d cells failed", len(failed), len(cells))
    return result


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Acceleration sweep: every phantom x acceleration x method, all target classes per cell."""
    cells = [
        Cell(p, ai, m, METHODS.index(m), cfg.b)
        for p in range(cfg.n_phantoms)
        for ai in range(len(cfg.accelerations))
        for m in cfg.methods
    ]
    return _execute(cfg, cells, "sweep")


def b_label(b: float) -> str:
    return f"SGR(b={b:g})"


def run_b_ablation(cfg: ExperimentConfig) -> RunResult:
    """SGR at ``cfg.ablation_acceleration`` for every ``b`` in ``cfg.b_values``."""
    if len(cfg.b_values) < 2:
        raise ValueError("the ablation needs at least two b values")
    if any(not b > 0 for b in cfg.b_values):
        raise ValueError("b values must be positive")
    # acc_idx -1 marks the ablation acceleration; all b share the SGR seed stream
    cells = [Cell(p, -1, b_label(b), 0, float(b)) for p in range(cfg.n_phantoms) for b in cfg.b_values]
    return _execute(cfg, cells, "ablate-b")

"""Experiment configuration files and the training runner behind ``train``.

Config files are flat ``key = value`` text. ``#`` starts a comment, blank
lines are ignored, unknown keys are rejected. Keys and defaults:

=============  ===============  ==================================================
key            default          meaning
=============  ===============  ==================================================
scene          box              constant | step | ramp | box
width          32               image width in pixels
height         32               image height in pixels
d_max          16               largest disparity candidate
d_bg           4.0              background (or left-half / ramp-start) disparity
d_fg           10.0             foreground (or right-half / ramp-end) disparity
image_noise    0.0              std of Gaussian noise added to the right image
scene_seed     0                texture seed of the training scene
held_out_seed  1                texture seed of the held-out scene (patch matcher)
matcher        free-volume      free-volume | sad | census | patch
window         5                SAD/census window, patch size for the matcher
init_scale     1.0              std of the random free-volume initialisation
cost_scale     10.0             multiplier on SAD/census costs before training
regression     l1               l1/mae or l2/mse
noise          laplacian        none | one_hot | three_pixel | gaussian | laplacian
sigma          1.0              Gaussian label width (px)
scale          1.0              Laplacian label scale (px)
weights        0.5,0.2,0.05     3-pixel weights for offsets 0, 1, 2
mu             0.05             weight of the cross-entropy term
steps          600              gradient-descent steps
lr             1.0              learning rate (per supervised pixel for volumes)
halve_at       0.4              fraction of steps after which lr is halved
seed           0                seed of the initialisation / pixel sampling
batch_pixels   0                patch matcher pixels per step, 0 = all
output_dir     (none)           where results are written
=============  ===============  ==================================================
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import DomainError
from .formats import save_volume, write_disparity_pfm, write_mask
from .labels import parse_label_kind
from .losses import LossConfig
from .matching import (
    census_cost_volume,
    evaluate_patch_matcher,
    interior_mask,
    optimize_free_volume,
    patch_cost_volume,
    random_volume,
    sad_cost_volume,
    train_patch_matcher,
)
from .metrics import d1_metrics, shape_diagnostics, write_metrics_csv
from .scenes import SceneSpec, foreground_mask, generate_scene
from .volume import CostVolume, DisparityMap, softargmin, wta_argmin

MATCHERS = ("free-volume", "sad", "census", "patch")

ABLATION = {
    "l1": ("l1", "none"),
    "l1_neighbor": ("l1", "three_pixel"),
    "l2_gaussian": ("l2", "gaussian"),
    "l1_laplacian": ("l1", "laplacian"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scene: str = "box"
    width: int = 32
    height: int = 32
    d_max: int = 16
    d_bg: float = 4.0
    d_fg: float = 10.0
    image_noise: float = 0.0
    scene_seed: int = 0
    held_out_seed: int = 1
    matcher: str = "free-volume"
    window: int = 5
    init_scale: float = 1.0
    cost_scale: float = 10.0
    regression: str = "l1"
    noise: str = "laplacian"
    sigma: float = 1.0
    scale: float = 1.0
    weights: str = "0.5,0.2,0.05"
    mu: float = 0.05
    steps: int = 600
    lr: float = 1.0
    halve_at: float = 0.4
    seed: int = 0
    batch_pixels: int = 0
    output_dir: str = ""

    def __post_init__(self):
        if self.matcher not in MATCHERS:
            raise DomainError(f"unknown matcher {self.matcher!r}; expected one of {MATCHERS}")
        self.scene_spec()
        self.loss_config()

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(self.width, self.height, self.d_max, self.scene, self.d_bg, self.d_fg,
                         self.image_noise)

    def weight_triple(self):
        try:
            w = tuple(float(x) for x in self.weights.split(","))
        except ValueError:
            raise DomainError(f"bad weights {self.weights!r}") from None
        return w

    def label_kind(self):
        return parse_label_kind(self.noise, self.sigma, self.scale, self.weight_triple())

    def loss_config(self) -> LossConfig:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return LossConfig(self.regression, self.label_kind(), self.mu)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"config line {line_no}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise DomainError(f"config line {line_no}: unknown key {key!r}")
            values[key] = _convert(key, value, types[key], line_no)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def _convert(key, value, type_name, line_no):
    try:
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
    except ValueError:
        raise DomainError(f"config line {line_no}: {key} expects {type_name}, got {value!r}") from None
    return value


@dataclass(frozen=True)
class RunResult:
    config: ExperimentConfig
    volume: CostVolume
    gt: DisparityMap
    trace: list
    metrics: object
    wta_metrics: object
    diagnostics: object
    weights: object = None


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Build the scene, run the configured learner, evaluate the final volume."""
    spec = config.scene_spec()
    loss = config.loss_config()
    pair, gt = generate_scene(spec, config.scene_seed)
    fg = foreground_mask(spec)
    weights = None
    if config.matcher == "patch":
        weights, trace = train_patch_matcher(
            [pair], [gt], loss, config.d_max, steps=config.steps, lr=config.lr, seed=config.seed,
            patch=config.window, batch_pixels=config.batch_pixels or None, halve_at=config.halve_at)
        pair, gt = generate_scene(spec, config.held_out_seed)
        gt = DisparityMap(gt.values, gt.valid & interior_mask(pair.shape, config.d_max, config.window))
        volume = patch_cost_volume(pair, weights, config.d_max, config.window)
    else:
        if config.matcher == "free-volume":
            init = random_volume(pair.shape, config.d_max, config.init_scale, config.seed)
        elif config.matcher == "sad":
            init = CostVolume(config.cost_scale * sad_cost_volume(pair, config.d_max, config.window).costs)
        else:
            init = CostVolume(config.cost_scale * census_cost_volume(pair, config.d_max, config.window).costs)
        volume, trace = optimize_free_volume(init, gt, loss, config.steps, config.lr, config.halve_at)
    return RunResult(
        config=config,
        volume=volume,
        gt=gt,
        trace=trace,
        metrics=d1_metrics(softargmin(volume), gt, fg),
        wta_metrics=d1_metrics(wta_argmin(volume), gt, fg),
        diagnostics=shape_diagnostics(volume, gt),
        weights=weights,
    )


def write_run(result: RunResult, out_dir):
    """Write config copy, loss trace, metrics, diagnostics and snapshots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(result.config.to_text())
    with open(out / "loss_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "total", "regression_part", "noise_part", "pixel_count"])
        for step, rep in enumerate(result.trace):
            writer.writerow([step, repr(rep.total), repr(rep.regression_part), repr(rep.noise_part),
                             rep.pixel_count])
    (out / "metrics.txt").write_text(result.metrics.to_text())
    write_metrics_csv(out / "metrics.csv", [
        result.metrics.csv_row(predictor="softargmin"),
        result.wta_metrics.csv_row(predictor="wta"),
    ])
    (out / "diagnostics.txt").write_text(result.diagnostics.to_text())
    save_volume(out / "volume.npy", result.volume)
    write_disparity_pfm(out / "gt.pfm", result.gt)
    write_disparity_pfm(out / "pred.pfm", softargmin(result.volume))
    write_mask(out / "fg_mask.pgm", foreground_mask(result.config.scene_spec()))
    if result.weights is not None:
        with open(out / "weights.npy", "wb") as fh:
            np.save(fh, result.weights, allow_pickle=False)


def ablation_configs(config: ExperimentConfig):
    """The four loss families compared side by side, sharing everything else."""
    return {name: replace(config, regression=reg, noise=noise) for name, (reg, noise) in ABLATION.items()}


def run_ablation(config: ExperimentConfig, out_dir):
    """Run every ablation variant into ``out_dir/<name>`` and write a summary CSV."""
    out = Path(out_dir)
    rows = []
    for name, cfg in ablation_configs(config).items():
        result = run_experiment(cfg)
        write_run(result, out / name)
        d = result.diagnostics
        rows.append({
            "variant": name,
            "regression": cfg.regression,
            "noise": cfg.noise,
            "three_px_error": repr(result.metrics.three_px_error),
            "d1_all": repr(result.metrics.d1_all),
            "epe": repr(result.metrics.epe),
            "unimodal_fraction": repr(d.unimodal_fraction),
            "peak_mass": repr(d.peak_mass),
            "coherence": repr(d.coherence),
            "final_loss": repr(result.trace[-1].total),
        })
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows

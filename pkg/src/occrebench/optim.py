"""Desk-scale unsupervised training of the voxel density field.

Each iteration renders a patch batch from one target view against the
current field, samples per-point colors from every other view, and
descends the weighted photometric + polarization loss with a from-scratch
Adam update.  Everything is driven by one seed: patch draws and per-point
jitter come from a per-iteration generator derived from (seed, iteration),
targets rotate round-robin, and gradient reduction uses a fixed ray order,
so a (config, seed) pair reproduces parameters bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from .benchmark import (build_opacity_map, compute_metrics, frustum_mask,
                        view_overlap_ratio, visibility_mask, voxelize_occupancy)
from .field import (AnalyticScene, VoxelDensityField, ground_truth_occupancy,
                    render_reference_image)
from .geometry import Pose
from .grids import VoxelGrid
from .losses import LossConfig, total_loss
from .rendering import (MODE_EVAL, MODE_TRAIN, SamplingConfig, SourceViewSampler,
                        composite, opacity, sample_patch_rays, sample_points_batch)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 2e-4
    lr_decay_factor: float = 2.0
    lr_decay_start: int = 1200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patch_count: int = 64
    patch_size: int = 8
    seed: int = 0
    lambda_r: float = 1.0
    lambda_p: float = 1e-3
    num_samples: int = 64
    near: float = 3.0
    far: float = 20.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if min(self.learning_rate, self.lr_decay_factor, self.beta1, self.beta2,
               self.eps) <= 0:
            raise ValueError("rates must be positive")
        if not (0.0 < self.near < self.far):
            raise ValueError("requires 0 < near < far")

    def loss_config(self) -> LossConfig:
        return LossConfig(self.lambda_r, self.lambda_p)


class AdamOptimizer:
    """Adaptive-moment update with bias correction, canonical constants."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.step_count = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.step_count)
        v_hat = self.v / (1 - self.beta2 ** self.step_count)
        theta -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    field: VoxelDensityField
    loss_total: np.ndarray
    loss_recon: np.ndarray
    loss_polar: np.ndarray


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Deterministic per-iteration stream: reruns replay patch and jitter draws."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(iteration,))))


def frustum_probe_grid(view, counts=(12, 12, 12)) -> VoxelGrid:
    """Coarse camera-frame grid spanning the view frustum's bounding box,
    used by the overlap gate."""
    intr = view.intrinsics
    corners_uv = np.array([[0.0, 0.0], [intr.width - 1.0, 0.0],
                           [0.0, intr.height - 1.0],
                           [intr.width - 1.0, intr.height - 1.0]])
    from .geometry import pixel_directions
    dirs = pixel_directions(intr, corners_uv)
    pts = np.concatenate([dirs * view.frustum.near, dirs * view.frustum.far])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    res = (hi - lo) / np.asarray(counts)
    return VoxelGrid.filled(lo, counts, res, False, dtype=bool, frame="camera")


def check_view_overlap(views, grid_by_view=None) -> list[float]:
    """Overlap ratio of each view's frustum against the remaining views.

    Raises if any ratio is zero: with no shared coverage the photometric
    loss has no cross-view signal and training cannot converge.
    """
    if len(views) < 2:
        raise ValueError("training needs at least two views")
    ratios = []
    for i, target in enumerate(views):
        sources = [v for j, v in enumerate(views) if j != i]
        grid = grid_by_view[i] if grid_by_view else frustum_probe_grid(target)
        ratio = view_overlap_ratio(target, sources, grid,
                                   grid_to_world=target.pose)
        ratios.append(ratio)
        if ratio == 0.0:
            raise ValueError(
                f"view {i} shares no frustum volume with any other view "
                f"(overlap ratio 0); widen the FOV or move the cameras")
    return ratios


def train(field: VoxelDensityField, scene: AnalyticScene, views,
          cfg: TrainConfig) -> TrainResult:
    """Fit the field to the scene's multi-view renders; mutates ``field``.

    Per iteration: round-robin target view, 64x8x8 patch rays by default,
    train-mode inverse-depth sampling, colors from all other views with
    per-view miss masks, loss gradients chained through softplus to the
    node parameters, one Adam step.
    """
    check_view_overlap(views)
    images = [render_reference_image(scene, v) for v in views]
    samplers = [SourceViewSampler(img, v) for img, v in zip(images, views)]
    adam = AdamOptimizer(field.theta.shape, cfg.beta1, cfg.beta2, cfg.eps)
    loss_cfg = cfg.loss_config()
    trace_total = np.zeros(cfg.iterations)
    trace_recon = np.zeros(cfg.iterations)
    trace_polar = np.zeros(cfg.iterations)

    for it in range(cfg.iterations):
        rng = iteration_rng(cfg.seed, it)
        target_idx = it % len(views)
        target = views[target_idx]
        scfg = SamplingConfig(cfg.num_samples, cfg.near, cfg.far, MODE_TRAIN)
        batch = sample_patch_rays(target, rng, cfg.patch_count, cfg.patch_size,
                                  view_index=target_idx)
        pix = batch.pixels.astype(np.int64)
        c_gt = images[target_idx][pix[:, 1], pix[:, 0]]
        origins, dirs = target.world_rays(batch.pixels)
        _, pts, delta = sample_points_batch(origins, dirs, scfg, rng)
        sigma = field.density_at(pts.reshape(-1, 3)).reshape(delta.shape)
        alpha = opacity(sigma, delta)

        grad_sigma = np.zeros_like(sigma)
        loss_sum = recon_sum = 0.0
        sources = [s for j, s in enumerate(samplers) if j != target_idx]
        for sampler in sources:
            colors, hit = sampler.sample_colors(pts)
            colors = np.where(hit[..., None], colors, 0.0)
            loss, grads = total_loss(alpha, colors, sigma, delta, c_gt, loss_cfg,
                                     miss=~hit)
            grad_sigma += grads.total_wrt_sigma
            loss_sum += loss
            c_hat, _, _ = composite(alpha, colors)
            recon_sum += float(np.mean(np.sum(np.abs(c_hat - c_gt), axis=-1)))
        n_src = len(sources)
        grad_sigma /= n_src
        trace_total[it] = loss_sum / n_src
        trace_recon[it] = recon_sum / n_src
        if cfg.lambda_p > 0:
            trace_polar[it] = (trace_total[it]
                               - cfg.lambda_r * trace_recon[it]) / cfg.lambda_p

        grad_theta = field.accumulate_param_grad(pts.reshape(-1, 3),
                                                 grad_sigma.reshape(-1))
        lr = cfg.learning_rate
        if it >= cfg.lr_decay_start:
            lr /= cfg.lr_decay_factor
        adam.step(field.theta, grad_theta, lr)

    return TrainResult(field=field, loss_total=trace_total,
                       loss_recon=trace_recon, loss_polar=trace_polar)


# ---------------------------------------------------------------------------
# Evaluation and the polarization ablation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalSetup:
    """Everything needed to score a trained field on one view."""

    grid: VoxelGrid
    grid_to_world: Pose
    view_index: int = 0
    num_samples: int = 128

    def t_vc(self, view) -> Pose:
        return view.pose.inverse().compose(self.grid_to_world)


def evaluate_field(density_field, scene: AnalyticScene, views,
                   setup: EvalSetup, cfg: TrainConfig):
    """Full benchmark pass: opacity map, voxelize, masks, metrics."""
    view = views[setup.view_index]
    t_vc = setup.t_vc(view)
    eval_cfg = SamplingConfig(setup.num_samples, cfg.near, cfg.far, MODE_EVAL)
    omap = build_opacity_map(density_field, view, eval_cfg)
    pred = voxelize_occupancy(omap, setup.grid, t_vc)
    gt = ground_truth_occupancy(scene, setup.grid, setup.grid_to_world)
    mf = frustum_mask(setup.grid, t_vc, view.intrinsics)
    mv = visibility_mask(gt, view, t_vc)
    return compute_metrics(pred, gt, mf, mv)


@dataclass
class AblationRow:
    seed: int
    with_lp: object
    without_lp: object


@dataclass
class ExperimentResult:
    """Paired twin-run outcomes across seeds."""

    rows: list = dataclass_field(default_factory=list)

    def mean_metric(self, name: str, arm: str) -> float:
        vals = [getattr(getattr(r, arm), name) for r in self.rows]
        if any(v is None for v in vals):
            raise ValueError(f"metric {name} undefined in some runs")
        return float(np.mean(vals))

    def mean_delta(self, name: str) -> float:
        return self.mean_metric(name, "with_lp") - self.mean_metric(name, "without_lp")


def run_polarization_ablation(base_field: VoxelDensityField, scene: AnalyticScene,
                              views, setup: EvalSetup, cfg: TrainConfig,
                              seeds) -> ExperimentResult:
    """Twin runs per seed: identical init and RNG streams, lambda_p on/off.

    The polarization weight does not influence any random draw, so the two
    arms see byte-identical supervision; metric differences isolate the
    loss term.
    """
    result = ExperimentResult()
    for seed in seeds:
        arms = {}
        for name, lam in (("with_lp", cfg.lambda_p), ("without_lp", 0.0)):
            run_cfg = replace(cfg, seed=int(seed), lambda_p=lam)
            trained = train(base_field.copy(), scene, views, run_cfg)
            arms[name] = evaluate_field(trained.field, scene, views, setup, run_cfg)
        result.rows.append(AblationRow(seed=int(seed), with_lp=arms["with_lp"],
                                       without_lp=arms["without_lp"]))
    return result


def run_lambda_sweep(base_field: VoxelDensityField, scene: AnalyticScene,
                     views, setup: EvalSetup, cfg: TrainConfig,
                     lambda_values) -> list:
    """Train once per polarization weight; returns [(lambda_p, MetricsReport)]."""
    out = []
    for lam in lambda_values:
        run_cfg = replace(cfg, lambda_p=float(lam))
        trained = train(base_field.copy(), scene, views, run_cfg)
        out.append((float(lam), evaluate_field(trained.field, scene, views,
                                               setup, run_cfg)))
    return out

"""Joint training loop, regression metrics, and the four-arm ablation harness.

One ablation run trains four arms per seed (baseline regression only,
spectral, spatial, spectral+spatial augmentation with the contrastive
term) from identical splits and initial weights, then reports R^2 and
MAE on the held-out patches as mean +/- std across seeds.
"""

from __future__ import annotations

import hashlib
import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .augment import AugmentPipeline, apply_pipeline, arm_pipeline
from .autodiff import Tensor
from .contrastive import (
    ContrastiveConfig,
    build_positive_sets,
    contrastive_loss,
    regression_loss,
    total_loss,
    twin_pair_map,
)
from .errors import DegenerateBatchError, NumericalError, ParameterError, ShapeError
from .hsi import PatchSet
from .nn import SGD, BackboneConfig, ModelParams, forward_backbone, forward_head, init_params, resolve_preset
from .seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

_SPLIT_STREAM = 11
_SHUFFLE_STREAM = 13
_AUG_STREAM = 17

ARM_ORDER = ("baseline", "spectral", "spatial", "spectral+spatial")
ARM_TITLES = {
    "baseline": "Baseline",
    "spectral": "Spectral",
    "spatial": "Spatial",
    "spectral+spatial": "Spectral+Spatial",
}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 200
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    arm: str = "none"  # none | spectral | spatial | spectral+spatial
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    split_fraction: float = 0.8
    preset: str | BackboneConfig = "base"
    precision: str = "single"  # single | double
    pipeline: AugmentPipeline | None = None  # overrides `arm` when given

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError("batch size must be positive")
        if self.epochs < 0:
            raise ParameterError("epochs must be non-negative")
        if not (0.0 < self.split_fraction < 1.0):
            raise ParameterError("split fraction must lie in (0, 1)")
        if self.precision not in ("single", "double"):
            raise ParameterError("precision must be 'single' or 'double'")
        if self.contrastive.weight > 0 and self.arm != "none" and self.batch_size < 2:
            raise ParameterError("contrastive training needs batch size >= 2")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    def resolved_pipeline(self) -> AugmentPipeline | None:
        if self.pipeline is not None:
            return self.pipeline
        return arm_pipeline(self.arm, master_seed=self.seed)

    def backbone(self) -> BackboneConfig:
        return resolve_preset(self.preset)


def config_digest(config: TrainConfig, k: int, patch_size: int, output_dim: int) -> str:
    backbone = config.backbone().canonical(k, patch_size, output_dim)
    text = (
        f"{backbone}|batch={config.batch_size}|epochs={config.epochs}|lr={config.lr}"
        f"|mom={config.momentum}|split={config.split_fraction}|prec={config.precision}"
        f"|r={config.contrastive.radius}|tau={config.contrastive.temperature}"
        f"|alpha={config.contrastive.weight}"
        f"|ppn={int(config.contrastive.per_positive_normalization)}"
        f"|incpos={int(config.contrastive.include_positives_in_denominator)}"
    )
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Split:
    train: PatchSet
    test: PatchSet


def split_dataset(patches: PatchSet, fraction: float, seed: int) -> Split:
    """Seeded shuffle then split; the two halves are disjoint and exhaustive."""
    if not (0.0 < fraction < 1.0):
        raise ParameterError("split fraction must lie in (0, 1)")
    n = len(patches)
    if n < 2:
        raise ShapeError("need at least 2 patches to split")
    n_train = min(max(int(fraction * n), 1), n - 1)
    perm = derive_rng(seed, _SPLIT_STREAM).permutation(n)
    return Split(
        train=patches.subset(perm[:n_train].tolist()),
        test=patches.subset(perm[n_train:].tolist()),
    )


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    total: float
    regression: float
    contrastive: float
    batches: int
    skipped: int


@dataclass
class TrainResult:
    model: ModelParams
    log: list[EpochLog]
    config: TrainConfig
    init_digest: str
    seconds: float


def train(config: TrainConfig, dataset: PatchSet) -> TrainResult:
    """SGD over the joint objective; bit-deterministic for a fixed config."""
    if len(dataset) < 1:
        raise ShapeError("training set is empty")
    t0 = time.perf_counter()
    k, s_patch, s_out = dataset.k, dataset.patch_size, dataset.label_dim
    dtype = config.dtype
    model = init_params(config.backbone(), k, s_patch, s_out, seed=config.seed, dtype=dtype)
    init_digest = model.state_digest()
    optimizer = SGD(lr=config.lr, momentum=config.momentum)

    pipeline = config.resolved_pipeline()
    alpha = config.contrastive.weight
    contrastive_on = pipeline is not None and alpha > 0
    min_batch = 2 if contrastive_on else 1

    data = dataset.data_array()
    labels = dataset.labels_array()
    n = len(dataset)
    log: list[EpochLog] = []

    for epoch in range(config.epochs):
        order = derive_rng(config.seed, _SHUFFLE_STREAM, epoch).permutation(n)
        aug_seed = derive_seed(config.seed, _AUG_STREAM, epoch)
        totals = np.zeros(3)
        batches = skipped = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if len(idx) < min_batch:
                continue
            anchors = data[idx]
            if pipeline is not None:
                twins = np.stack(
                    [
                        apply_pipeline(dataset[int(j)], pipeline, int(j), master_seed=aug_seed).data
                        for j in idx
                    ]
                )
                views = np.concatenate([anchors, twins])
                view_labels = np.concatenate([labels[idx], labels[idx]])
            else:
                views = anchors
                view_labels = labels[idx]
            batch = Tensor(views[:, None].astype(dtype))
            feats = forward_backbone(model, batch)
            preds = forward_head(model, feats)
            reg = regression_loss(preds, view_labels.astype(dtype))
            con = None
            if contrastive_on:
                pos = build_positive_sets(view_labels, twin_pair_map(len(idx)), config.contrastive.radius)
                try:
                    con = contrastive_loss(
                        feats,
                        pos,
                        config.contrastive.temperature,
                        per_positive_normalization=config.contrastive.per_positive_normalization,
                        include_positives_in_denominator=config.contrastive.include_positives_in_denominator,
                    )
                except DegenerateBatchError:
                    logger.warning("epoch %d: degenerate contrastive batch skipped", epoch)
                    skipped += 1
                    continue
            loss = total_loss(reg, con, alpha if contrastive_on else 0.0)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {batches}")
            model.zero_grad()
            loss.backward()
            model.fill_missing_grads()
            optimizer.step(model)
            totals += (loss_value, float(reg.data), float(con.data) if con is not None else 0.0)
            batches += 1
        denom = max(batches, 1)
        log.append(
            EpochLog(
                epoch=epoch,
                total=totals[0] / denom,
                regression=totals[1] / denom,
                contrastive=totals[2] / denom,
                batches=batches,
                skipped=skipped,
            )
        )
    return TrainResult(
        model=model,
        log=log,
        config=config,
        init_digest=init_digest,
        seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# metrics


def r2_score(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Coefficient of determination per component, averaged uniformly.

    Components with constant truth are skipped with a warning; if all
    are constant the metric is undefined.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"predictions {p.shape} and truth {y.shape} differ")
    if p.ndim == 1:
        p, y = p[:, None], y[:, None]
    if p.shape[0] < 2:
        raise ShapeError("r2 needs at least 2 samples")
    ss_res = ((y - p) ** 2).sum(axis=0)
    ss_tot = ((y - y.mean(axis=0)) ** 2).sum(axis=0)
    keep = ss_tot > 0.0
    if not keep.any():
        raise NumericalError("r2 undefined: truth is constant in every component")
    if not keep.all():
        warnings.warn("r2: skipping constant-truth components")
    return float(np.mean(1.0 - ss_res[keep] / ss_tot[keep]))


def mae(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute error over all entries."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"predictions {p.shape} and truth {y.shape} differ")
    return float(np.abs(p - y).mean())


@dataclass
class EvalResult:
    r2: float
    mae: float
    predictions: np.ndarray


def evaluate(model: ModelParams, dataset: PatchSet, batch_size: int = 256) -> EvalResult:
    """Metrics on unaugmented patches; no gradients are recorded."""
    data = dataset.data_array()
    labels = dataset.labels_array()
    dtype = next(iter(model.params.values())).data.dtype
    preds = []
    with ad.no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = data[start : start + batch_size]
            feats = forward_backbone(model, Tensor(chunk[:, None].astype(dtype)))
            preds.append(np.array(forward_head(model, feats).data, dtype=np.float64))
    predictions = np.concatenate(preds)
    return EvalResult(r2=r2_score(predictions, labels), mae=mae(predictions, labels), predictions=predictions)


# ---------------------------------------------------------------------------
# ablation harness


@dataclass
class ArmResult:
    arm: str
    r2_per_seed: list[float]
    mae_per_seed: list[float]

    @property
    def r2_mean(self) -> float:
        return float(np.mean(self.r2_per_seed))

    @property
    def r2_std(self) -> float:
        return float(np.std(self.r2_per_seed))

    @property
    def mae_mean(self) -> float:
        return float(np.mean(self.mae_per_seed))

    @property
    def mae_std(self) -> float:
        return float(np.std(self.mae_per_seed))


@dataclass
class MetricsReport:
    arms: dict[str, ArmResult]
    seeds: list[int]
    preset: str
    config_digest: str
    runtime_seconds: float

    SCHEMA = "hycoreg.ablation.v1"

    def to_text(self) -> str:
        """Key-value section followed by an aligned table mirroring the 4-arm layout."""
        lines = [
            f"schema = {self.SCHEMA}",
            f"preset = {self.preset}",
            f"config_digest = {self.config_digest}",
            f"seeds = {','.join(str(s) for s in self.seeds)}",
            f"runtime_seconds = {self.runtime_seconds:.3f}",
        ]
        for arm in ARM_ORDER:
            res = self.arms[arm]
            lines.append(f"arm.{arm}.r2.mean = {res.r2_mean:.9g}")
            lines.append(f"arm.{arm}.r2.std = {res.r2_std:.9g}")
            lines.append(f"arm.{arm}.mae.mean = {res.mae_mean:.9g}")
            lines.append(f"arm.{arm}.mae.std = {res.mae_std:.9g}")
            for seed, r2v, maev in zip(self.seeds, res.r2_per_seed, res.mae_per_seed):
                lines.append(f"arm.{arm}.seed{seed}.r2 = {r2v:.9g}")
                lines.append(f"arm.{arm}.seed{seed}.mae = {maev:.9g}")
        lines.append("")
        lines.append(self.render_table())
        return "\n".join(lines) + "\n"

    def render_table(self) -> str:
        header = f"{'Arm':<20}{'R2':>18}{'MAE':>20}"
        rows = [header, "-" * len(header)]
        for arm in ARM_ORDER:
            res = self.arms[arm]
            r2_cell = f"{res.r2_mean:.3f} +/- {res.r2_std:.3f}"
            mae_cell = f"{res.mae_mean:.4f} +/- {res.mae_std:.4f}"
            rows.append(f"{ARM_TITLES[arm]:<20}{r2_cell:>18}{mae_cell:>20}")
        return "\n".join(rows)


def parse_report(text: str) -> dict[str, str]:
    """Key-value section of a report as a dict (table lines are ignored)."""
    out: dict[str, str] = {}
    for line in text.splitlines():
        if " = " in line:
            key, value = line.split(" = ", 1)
            out[key.strip()] = value.strip()
    return out


def ablate(config: TrainConfig, dataset: PatchSet, seeds: list[int]) -> MetricsReport:
    """Train all four arms per seed from shared splits and initial weights."""
    if not seeds:
        raise ParameterError("at least one seed is required")
    t0 = time.perf_counter()
    k, s_patch, s_out = dataset.k, dataset.patch_size, dataset.label_dim
    arms = {arm: ArmResult(arm=arm, r2_per_seed=[], mae_per_seed=[]) for arm in ARM_ORDER}
    for seed in seeds:
        split = split_dataset(dataset, config.split_fraction, seed)
        init_digests = set()
        for arm in ARM_ORDER:
            arm_key = "none" if arm == "baseline" else arm
            cfg = replace(config, arm=arm_key, seed=seed, pipeline=None)
            result = train(cfg, split.train)
            init_digests.add(result.init_digest)
            scores = evaluate(result.model, split.test)
            arms[arm].r2_per_seed.append(scores.r2)
            arms[arm].mae_per_seed.append(scores.mae)
            logger.info(
                "seed %d arm %s: r2=%.4f mae=%.4f (%.1fs)",
                seed, arm, scores.r2, scores.mae, result.seconds,
            )
        if len(init_digests) != 1:
            raise NumericalError("arms started from different initial weights")
    preset_name = config.preset if isinstance(config.preset, str) else "custom"
    return MetricsReport(
        arms=arms,
        seeds=list(seeds),
        preset=preset_name,
        config_digest=config_digest(config, k, s_patch, s_out),
        runtime_seconds=time.perf_counter() - t0,
    )

"""Spectral-spatial contrastive regression toolkit for hyperspectral cubes."""

from .augment import (
    ALL_OPS,
    SPATIAL_OPS,
    SPECTRAL_OPS,
    AugmentPipeline,
    AugmentSpec,
    apply_pipeline,
    apply_spec,
    arm_pipeline,
)
from .bundle import HsiBundle, read_bundle, write_bundle
from .contrastive import (
    ContrastiveConfig,
    PositiveSets,
    build_positive_sets,
    contrastive_loss,
    regression_loss,
    total_loss,
    twin_pair_map,
)
from .hsi import HyperCube, LabelVector, Patch, PatchSet, extract_patches, patch_label
from .nn import PRESETS, BackboneConfig, ConvStage, ModelParams, SGD, forward_backbone, forward_head, init_params
from .synth import (
    AbundanceField,
    EndmemberMatrix,
    SynthConfig,
    SyntheticScene,
    add_noise_snr,
    gaussian_modulation,
    generate_scene,
    load_endmembers,
    pnmm_mix,
    sample_abundances,
    save_endmembers,
    synth_endmembers,
)
from .training import (
    MetricsReport,
    TrainConfig,
    ablate,
    evaluate,
    mae,
    r2_score,
    split_dataset,
    train,
)

__version__ = "0.1.0"

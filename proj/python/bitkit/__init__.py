"""Python bindings for the bitkit transfer-learning toolkit."""

from ._bitkit import (
    BitkitError,
    conv2d,
    dhash64,
    effective_lr,
    group_norm,
    hamming_distance,
    load_bitd,
    mixup_apply,
    plan,
    save_bitd,
    synth_dataset,
    topk_accuracy,
    weight_standardize,
)

__all__ = [
    "BitkitError",
    "conv2d",
    "dhash64",
    "effective_lr",
    "group_norm",
    "hamming_distance",
    "load_bitd",
    "mixup_apply",
    "plan",
    "save_bitd",
    "synth_dataset",
    "topk_accuracy",
    "weight_standardize",
]

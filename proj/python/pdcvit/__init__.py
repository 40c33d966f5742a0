"""Pixel difference convolutions feeding a vision transformer, for source
camera identification."""

from ._core import (
    angular_pairs,
    cli,
    conv2d,
    convert_weights,
    gen_synthetic,
    pdc_forward_converted,
    pdc_forward_direct,
    radial_pairs,
    report_from_confusion,
    scan_dataset,
    softmax,
    verify,
)

__all__ = [
    "angular_pairs",
    "cli",
    "conv2d",
    "convert_weights",
    "gen_synthetic",
    "pdc_forward_converted",
    "pdc_forward_direct",
    "radial_pairs",
    "report_from_confusion",
    "scan_dataset",
    "softmax",
    "verify",
]

# SPDX-License-Identifier: Apache-2.0
"""Learned image compression with grouped causal context and global prediction."""

from ccpc._core import (
    Codec,
    CorruptStreamError,
    DimensionError,
    InvalidParamsError,
    IoError,
    Model,
    NonFiniteError,
    VersionMismatchError,
    bd_rate,
    ms_ssim,
    psnr,
    range_decode,
    range_encode,
    read_png,
    train,
    write_png,
)

__all__ = [
    "Codec",
    "CorruptStreamError",
    "DimensionError",
    "InvalidParamsError",
    "IoError",
    "Model",
    "NonFiniteError",
    "VersionMismatchError",
    "bd_rate",
    "ms_ssim",
    "psnr",
    "range_decode",
    "range_encode",
    "read_png",
    "train",
    "write_png",
]

from __future__ import annotations

from enum import IntEnum
from typing import Optional


class ExitCode(IntEnum):
    OK = 0
    USAGE = 1
    DATA = 2
    DIVERGENCE = 3


class VoxelCTError(Exception):
    exit_code = ExitCode.DATA


class InvalidArgumentError(VoxelCTError, ValueError):
    exit_code = ExitCode.USAGE


class ConfigError(VoxelCTError):
    exit_code = ExitCode.USAGE


class DataFormatError(VoxelCTError):
    """Malformed header, payload size mismatch or unwritable values."""


class UndefinedMetricError(VoxelCTError):
    pass


class DivergenceError(VoxelCTError):
    exit_code = ExitCode.DIVERGENCE

    def __init__(self, message: str, epoch: int, batch: int, value: Optional[float] = None) -> None:
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch
        self.value = value

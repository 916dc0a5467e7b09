"""Binary tensor and checkpoint formats, plus flat key=value run configs.

BT1 tensor block: magic ``BEART1``, u32-LE rank, rank u32-LE extents, then
row-major IEEE-754 little-endian float32 elements.

BC1 checkpoint: magic ``BEARC1``, u32-LE header length, a UTF-8 header of
flat ``cfg.<key>=<value>`` and ``meta.<key>=<value>`` lines, then for each
parameter a u32-LE name length, the UTF-8 name, and a BT1 block, in
parameter-set order.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .errors import ConfigError, FormatError
from .model import BearConfig, parameter_shapes
from .tensor import ParameterSet, Tensor

BT1_MAGIC = b"BEART1"
BC1_MAGIC = b"BEARC1"


# ---------------------------------------------------------------------------
# BT1 tensors


def _read_exact(fh: BinaryIO, count: int, what: str) -> bytes:
    offset = fh.tell()
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated {what}: needed {count} bytes at byte offset {offset}, got {len(data)}")
    return data


def write_bt1(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(BT1_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def read_bt1(fh: BinaryIO) -> np.ndarray:
    offset = fh.tell()
    magic = _read_exact(fh, len(BT1_MAGIC), "tensor magic")
    if magic != BT1_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r} at byte offset {offset} (expected {BT1_MAGIC!r})")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
    if rank == 0 or rank > 8:
        raise FormatError(f"unreasonable tensor rank {rank} at byte offset {offset + len(BT1_MAGIC)}")
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "tensor extents"))
    if any(s == 0 for s in shape):
        raise FormatError(f"zero extent in tensor shape {shape} at byte offset {offset}")
    count = int(np.prod(shape))
    raw = _read_exact(fh, 4 * count, "tensor elements")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_bt1(fh, arr)


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_bt1(fh)
        if fh.read(1):
            raise FormatError(f"trailing bytes after tensor data at byte offset {fh.tell() - 1}")
    return arr


# ---------------------------------------------------------------------------
# run configuration files (flat key=value)

_BEAR_FIELDS: dict[str, type] = {
    "n": int,
    "d": int,
    "r": int,
    "m": int,
    "f_pfe": int,
    "f_rfe": int,
    "f_bfe": int,
    "f_dec": int,
    "pf_branches": int,
    "kernel_size": int,
    "seed": int,
}

_TRAIN_FIELDS: dict[str, type] = {
    "loss": str,
    "lr0": float,
    "plateau_patience": int,
    "decay_factor": float,
    "stop_patience": int,
    "batch_size": int,
    "max_epochs": int,
    "val_fraction": float,
    "l2": float,
    "seed": int,
}


def parse_kv_text(text: str, label: str = "config") -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{label} line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{label} line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"{label} line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(key: str, value: str, kind: type, label: str):
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{label}: key {key!r} has invalid {kind.__name__} value {value!r}") from None


def split_run_config(mapping: Mapping[str, str], label: str = "config"):
    """Route flat keys into a (BearConfig, TrainConfig) pair.

    The single ``seed`` key feeds both the initializer and the training
    shuffles. Unknown keys are rejected by name.
    """
    from .train import TrainConfig  # local import to avoid a cycle

    bear_kwargs: dict = {}
    train_kwargs: dict = {}
    for key, value in mapping.items():
        known = False
        if key in _BEAR_FIELDS:
            bear_kwargs[key] = _convert(key, value, _BEAR_FIELDS[key], label)
            known = True
        if key in _TRAIN_FIELDS:
            train_kwargs[key] = _convert(key, value, _TRAIN_FIELDS[key], label)
            known = True
        if not known:
            raise ConfigError(f"{label}: unknown config key {key!r}")
    return BearConfig(**bear_kwargs), TrainConfig(**train_kwargs)


def load_run_config(path: str | Path):
    text = Path(path).read_text(encoding="utf-8")
    return split_run_config(parse_kv_text(text, label=str(path)), label=str(path))


def config_lines(cfg: BearConfig) -> list[str]:
    """Canonical serialization of a BearConfig, one key=value per field."""
    return [f"{f.name}={getattr(cfg, f.name)}" for f in fields(BearConfig)]


def config_hash(cfg: BearConfig) -> str:
    payload = "\n".join(config_lines(cfg)) + "\n"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def config_from_mapping(mapping: Mapping[str, str], label: str = "checkpoint header") -> BearConfig:
    kwargs: dict = {}
    for key, value in mapping.items():
        if key not in _BEAR_FIELDS:
            raise FormatError(f"{label}: unknown config key {key!r}")
        kwargs[key] = _convert(key, value, _BEAR_FIELDS[key], label)
    try:
        return BearConfig(**kwargs)
    except ConfigError as exc:
        raise FormatError(f"{label}: {exc}") from None


# ---------------------------------------------------------------------------
# BC1 checkpoints


@dataclass
class Checkpoint:
    """A trained (or freshly initialized) model: weights, config, metadata."""

    config: BearConfig
    params: ParameterSet
    metadata: dict[str, str]


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write a BC1 file atomically (temp file then rename)."""
    path = Path(path)
    header_lines = [f"cfg.{line}" for line in config_lines(ckpt.config)]
    header_lines += [f"meta.{k}={v}" for k, v in sorted(ckpt.metadata.items())]
    header = ("\n".join(header_lines) + "\n").encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(BC1_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, tensor in ckpt.params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            write_bt1(fh, tensor.data)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expect_config: BearConfig | None = None) -> Checkpoint:
    """Read a BC1 file; optionally require its config to match ``expect_config``."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(BC1_MAGIC), "checkpoint magic")
        if magic != BC1_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r} at byte offset 0 (expected {BC1_MAGIC!r})")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = _read_exact(fh, header_len, "checkpoint header").decode("utf-8")
        raw = parse_kv_text(header, label=f"{path} header")
        cfg_map = {k[4:]: v for k, v in raw.items() if k.startswith("cfg.")}
        meta = {k[5:]: v for k, v in raw.items() if k.startswith("meta.")}
        stray = [k for k in raw if not (k.startswith("cfg.") or k.startswith("meta."))]
        if stray:
            raise FormatError(f"{path}: unexpected header key {stray[0]!r}")
        cfg = config_from_mapping(cfg_map, label=f"{path} header")
        expected = parameter_shapes(cfg)
        params = ParameterSet()
        for expected_name, expected_shape in expected.items():
            offset = fh.tell()
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "parameter name length"))
            name = _read_exact(fh, name_len, "parameter name").decode("utf-8")
            if name != expected_name:
                raise FormatError(
                    f"unknown parameter name {name!r} at byte offset {offset} (expected {expected_name!r})"
                )
            arr = read_bt1(fh)
            if arr.shape != expected_shape:
                raise FormatError(
                    f"parameter {name!r}: stored shape {arr.shape} does not match configured {expected_shape}"
                )
            params.add(name, Tensor(arr, requires_grad=True))
        if fh.read(1):
            raise FormatError(f"trailing bytes after parameters at byte offset {fh.tell() - 1}")
    if expect_config is not None and cfg != expect_config:
        raise ConfigError(
            f"checkpoint config hash {config_hash(cfg)[:12]} does not match "
            f"expected {config_hash(expect_config)[:12]}"
        )
    return Checkpoint(config=cfg, params=params, metadata=meta)

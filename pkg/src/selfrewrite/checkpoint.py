"""Text checkpoints: a JSON manifest plus decimal arrays, one value per line.

Values are written with ``repr`` (shortest round-tripping form), so loading a
checkpoint reproduces every float64 bit for bit.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .backends.toy import PolicyParameters
from .grpo import OptimizerState

FORMAT_VERSION = 1
_ARRAYS = ("theta", "m", "v")


def _write_array(path: Path, values: np.ndarray) -> None:
    path.write_text("".join(repr(float(x)) + "\n" for x in values))


def _read_array(path: Path) -> np.ndarray:
    return np.array([float(line) for line in path.read_text().splitlines() if line])


def save_checkpoint(
    directory: str | Path,
    params: PolicyParameters,
    state: OptimizerState,
    step: int,
    extra: dict | None = None,
) -> Path:
    """Write atomically: files go to a temp dir which is renamed into place."""
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    tmp.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "vocabulary_size": params.vocabulary_size,
        "context_order": params.context_order,
        "parameter_count": params.size,
        "step": step,
        "optimizer_step": state.step,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
    }
    if extra:
        manifest["extra"] = extra
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    _write_array(tmp / "theta.txt", params.theta)
    _write_array(tmp / "m.txt", state.m)
    _write_array(tmp / "v.txt", state.v)
    if directory.exists():
        for name in os.listdir(directory):
            (directory / name).unlink()
        directory.rmdir()
    tmp.rename(directory)
    return directory


def load_checkpoint(directory: str | Path) -> tuple[PolicyParameters, OptimizerState, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    theta, m, v = (_read_array(directory / f"{name}.txt") for name in _ARRAYS)
    if theta.size != manifest["parameter_count"]:
        raise ValueError("parameter_count does not match stored vector")
    params = PolicyParameters(theta, manifest["vocabulary_size"], manifest["context_order"])
    state = OptimizerState(m, v, manifest["optimizer_step"], manifest["beta1"], manifest["beta2"], manifest["eps"])
    return params, state, manifest

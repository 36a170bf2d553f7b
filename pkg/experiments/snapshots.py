import json
import os
from dataclasses import asdict
from typing import Any, Dict, Optional, Tuple

import numpy as np

from model import (
    CnlsCoefficients,
    ComplexState,
    ConfigurationError,
    DomainLayout,
    GridSpec,
)
from reference import GroundState

MAGIC = b"CNLSPML\0"
VERSION = 1


def write_snapshot(
    path: str,
    state: ComplexState,
    coefficients: CnlsCoefficients,
    extra: Optional[Dict[str, Any]] = None,
) -> None:
    """Write a state as MAGIC | version | header length | JSON header | payload.

    The two integers are little-endian uint32 and the payload holds the
    (re, im) pairs of the (N, nx, ny) field as little-endian float64, row-major.
    """
    header = {
        "coefficients": asdict(coefficients),
        "layout": asdict(state.layout),
        "grid": asdict(state.grid),
        "time": state.time,
        "n_components": state.n_components,
        "extra": extra or {},
    }
    encoded = json.dumps(header).encode("utf-8")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, mode="wb") as f:
        f.write(MAGIC)
        f.write(np.array([VERSION, len(encoded)], dtype="<u4").tobytes())
        f.write(encoded)
        f.write(np.ascontiguousarray(state.data, dtype="<c16").tobytes())


def read_snapshot(path: str) -> Tuple[ComplexState, CnlsCoefficients, Dict[str, Any]]:
    with open(path, mode="rb") as f:
        raw = f.read()

    if raw[: len(MAGIC)] != MAGIC:
        raise ConfigurationError(f"{path} is not a snapshot file")
    offset = len(MAGIC)
    version, length = np.frombuffer(raw, dtype="<u4", count=2, offset=offset)
    if version != VERSION:
        raise ConfigurationError(f"unsupported snapshot version {version}")
    offset += 8
    header = json.loads(raw[offset : offset + length].decode("utf-8"))
    offset += int(length)

    layout = DomainLayout(**header["layout"])
    grid = GridSpec(**header["grid"])
    coeffs = header["coefficients"]
    coefficients = CnlsCoefficients(
        tuple(coeffs["alpha_x"]),
        tuple(coeffs["alpha_y"]),
        tuple(coeffs["beta"]),
        coeffs["gamma"],
        coeffs["eps_q"],
        coeffs["nonlinearity"],
    )
    n = header["n_components"]
    expected = n * grid.nx * grid.ny * 16
    if len(raw) - offset != expected:
        raise ConfigurationError(
            f"payload of {len(raw) - offset} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype="<c16", offset=offset).reshape(n, grid.nx, grid.ny)
    state = ComplexState(layout, grid, data.astype(np.complex128), header["time"])
    return state, coefficients, header["extra"]


def save_ground_state(path: str, ground_state: GroundState) -> None:
    write_snapshot(
        path,
        ground_state.as_state(),
        ground_state.coefficients,
        extra={
            "kind": "ground_state",
            "residual": ground_state.residual,
            "residual_history": list(ground_state.residual_history),
            "homotopy_parameter": ground_state.homotopy_parameter,
            "frequency": ground_state.frequency,
        },
    )


def load_ground_state(path: str) -> GroundState:
    state, coefficients, extra = read_snapshot(path)
    if extra.get("kind") != "ground_state":
        raise ConfigurationError(f"{path} does not hold a ground state")
    return GroundState(
        np.real(state.data).copy(),
        state.layout,
        state.grid,
        coefficients,
        extra["residual"],
        extra.get("residual_history", []),
        extra.get("homotopy_parameter", 1.0),
        extra.get("frequency", 1.0),
    )

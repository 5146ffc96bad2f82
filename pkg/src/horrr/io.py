"""On-disk formats: binary tensors, CSV matrices, checkpoints, problem dirs.

Binary tensor format (extension ``.hort``)::

    bytes 0-3   magic "HORT"
    u32         version (1), little endian
    u32         order
    u64[order]  dims
    f64[...]    payload, little endian, mode-0 index fastest (Fortran order,
                i.e. the linearization matching ``horrr.tensors.unfold``)

Matrices may alternatively be stored as headerless CSV (one row per line).

A point checkpoint is a directory with ``manifest.json`` (dims, ranks,
metadata) plus ``core.hort`` and ``factor_<i>.hort``.  A problem directory
holds ``manifest.json`` (recording lambda, degree, rank and provenance)
plus ``X``/``Y`` as either ``.hort`` or ``.csv``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from horrr.manifold import TuckerPoint
from horrr.objective import HorrrProblem

__all__ = [
    "write_tensor",
    "read_tensor",
    "write_matrix_csv",
    "read_matrix_csv",
    "save_point",
    "load_point",
    "save_problem",
    "load_problem",
]

MAGIC = b"HORT"
VERSION = 1


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=float)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.ravel(order="F").astype("<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a HORT tensor file")
        version, order = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        dims = struct.unpack(f"<{order}Q", fh.read(8 * order))
        count = int(np.prod(dims, dtype=np.int64)) if order else 1
        payload = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
    return payload.reshape(dims, order="F").astype(float)


def write_matrix_csv(path, mat: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(mat), delimiter=",")


def read_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def save_point(directory, point: TuckerPoint, metadata: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "dims": list(point.dims),
        "ranks": list(point.ranks),
        "order": point.order,
        "files": {"core": "core.hort", "factors": [f"factor_{i}.hort" for i in range(point.order)]},
    }
    if metadata:
        manifest["metadata"] = metadata
    write_tensor(directory / "core.hort", point.core)
    for i, f in enumerate(point.factors):
        write_tensor(directory / f"factor_{i}.hort", f)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_point(directory) -> TuckerPoint:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    core = read_tensor(directory / manifest["files"]["core"])
    factors = [read_tensor(directory / name) for name in manifest["files"]["factors"]]
    return TuckerPoint(core, factors)


def _read_any_matrix(directory: Path, stem: str) -> np.ndarray:
    for suffix, reader in ((".hort", read_tensor), (".csv", read_matrix_csv)):
        path = directory / f"{stem}{suffix}"
        if path.exists():
            return np.atleast_2d(reader(path))
    raise FileNotFoundError(f"{directory}: no {stem}.hort or {stem}.csv")


def save_problem(directory, prob: HorrrProblem, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "lambda": prob.lam,
        "degree": prob.degree,
        "rank": prob.rank,
        "k": prob.n_outputs,
        "m": prob.n_features,
        "n": prob.n_samples,
    }
    if extra:
        manifest.update(extra)
    write_tensor(directory / "X.hort", prob.x)
    write_tensor(directory / "Y.hort", prob.y)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_problem(directory) -> tuple[HorrrProblem, dict]:
    """Problem plus its manifest; ``X``/``Y`` accepted in either format."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    x = _read_any_matrix(directory, "X")
    y = _read_any_matrix(directory, "Y")
    prob = HorrrProblem(
        x,
        y,
        lam=float(manifest.get("lambda", 0.0)),
        degree=int(manifest.get("degree", 1)),
        rank=int(manifest.get("rank", 1)),
    )
    return prob, manifest

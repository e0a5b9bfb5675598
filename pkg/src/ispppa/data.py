"""Synthetic dataset generation and exact binary persistence.

Data model: A has standard normal entries, the planted solution x* has
floor(rho_s * d) nonzeros with standard normal values on a uniform support.
Responses per kind: logistic labels b_i = +-1 by the sign of (A x* + sigma
xi)_i (ties to +1), linear b = A x* + sigma xi, and phase retrieval
b = (A x*)^2 + sigma xi.

The on-disk container is exact: magic "ISPP1", little-endian u64 n and d,
then row-major f64 A, f64 b, f64 x*, f64 sigma, plus a text manifest.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"ISPP1"
KINDS = ("logistic_labels", "linear_response", "phase_retrieval")


class DataError(Exception):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    n: int
    d: int
    kind: str
    sigma: float = 0.0
    rho_s: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise DataError("n and d must be >= 1")
        if self.kind not in KINDS:
            raise DataError(f"unknown dataset kind {self.kind!r}")
        if not 0.0 < self.rho_s <= 1.0:
            raise DataError("rho_s must lie in (0, 1]")
        if self.sigma < 0:
            raise DataError("sigma must be nonnegative")


@dataclass(frozen=True)
class Dataset:
    A: np.ndarray
    b: np.ndarray
    x_star: np.ndarray
    kind: str
    sigma: float
    rho_s: float
    seed: int


def gen_synthetic(spec: DatasetSpec) -> Dataset:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    A = rng.standard_normal((spec.n, spec.d))
    x_star = np.zeros(spec.d)
    nnz = int(spec.rho_s * spec.d)
    support = rng.choice(spec.d, size=nnz, replace=False)
    x_star[support] = rng.standard_normal(nnz)
    noise = rng.standard_normal(spec.n)
    signal = A @ x_star
    if spec.kind == "logistic_labels":
        b = np.where(signal + spec.sigma * noise >= 0.0, 1.0, -1.0)
    elif spec.kind == "linear_response":
        b = signal + spec.sigma * noise
    else:
        b = signal * signal + spec.sigma * noise
    return Dataset(A=A, b=b, x_star=x_star, kind=spec.kind,
                   sigma=spec.sigma, rho_s=spec.rho_s, seed=spec.seed)


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    n, d = ds.A.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", n, d))
        fh.write(np.ascontiguousarray(ds.A, dtype="<f8").tobytes())
        fh.write(np.asarray(ds.b, dtype="<f8").tobytes())
        fh.write(np.asarray(ds.x_star, dtype="<f8").tobytes())
        fh.write(struct.pack("<d", ds.sigma))
    manifest = {
        "kind": ds.kind,
        "n": n,
        "d": d,
        "sigma": ds.sigma,
        "rho_s": ds.rho_s,
        "seed": ds.seed,
    }
    path.with_suffix(path.suffix + ".manifest").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:5] != MAGIC:
        raise DataError("bad magic bytes: not a dataset container")
    n, d = struct.unpack_from("<QQ", raw, 5)
    off = 5 + 16
    A = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d).copy()
    off += 8 * n * d
    b = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
    off += 8 * n
    x_star = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    (sigma,) = struct.unpack_from("<d", raw, off)
    manifest_path = path.with_suffix(path.suffix + ".manifest")
    kind, rho_s, seed = "linear_response", 0.0, 0
    if manifest_path.exists():
        meta = json.loads(manifest_path.read_text())
        kind = meta.get("kind", kind)
        rho_s = float(meta.get("rho_s", rho_s))
        seed = int(meta.get("seed", seed))
    return Dataset(A=A, b=b, x_star=x_star, kind=kind, sigma=sigma, rho_s=rho_s, seed=seed)

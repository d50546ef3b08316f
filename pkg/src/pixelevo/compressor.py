"""Online-growing residual dictionary (IDVQ) and binary residual sparse coder (DRSC).

Observations are flat float32 vectors in [0, 1]. The dictionary only ever
grows: each new centroid is the clipped residual an observation left behind
when encoded against the dictionary of the time.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DICT_MAGIC = b"IDVQDICT"
DICT_VERSION = 1
_DICT_HEADER = struct.Struct("<8sIII")


class ContractError(ValueError):
    """Raised when an operation is called with inconsistent arguments."""


@dataclass(frozen=True)
class CompressorConfig:
    delta: float = 0.005
    epsilon: float = 0.005
    omega: int = 10
    train_set_capacity: int = 50
    prioritized: bool = False

    def __post_init__(self):
        if self.delta < 0 or self.epsilon < 0:
            raise ContractError("delta and epsilon must be non-negative")
        if self.omega < 1 or self.train_set_capacity < 1:
            raise ContractError("omega and train_set_capacity must be >= 1")


def as_observation(pixels, width: int | None = None, height: int | None = None) -> np.ndarray:
    """Validate and flatten an observation to a float32 vector."""
    x = np.asarray(pixels, dtype=np.float32).ravel()
    if width is not None and height is not None and x.size != width * height:
        raise ContractError(f"expected {width}x{height} pixels, got {x.size}")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ContractError("pixel values must lie in [0, 1]")
    return x


class Dictionary:
    """Append-only list of centroid images, stored as rows of a float32 matrix."""

    def __init__(self, image_len: int, centroids=None):
        if image_len < 1:
            raise ContractError("image_len must be positive")
        self.image_len = int(image_len)
        self._rows = np.zeros((8, self.image_len), dtype=np.float32)
        self._size = 0
        if centroids is not None:
            for c in centroids:
                self.append(c)

    def __len__(self) -> int:
        return self._size

    @property
    def centroids(self) -> np.ndarray:
        """Read-only view of the centroid matrix, shape (size, image_len)."""
        view = self._rows[: self._size]
        view.flags.writeable = False
        return view

    def append(self, centroid) -> None:
        c = np.asarray(centroid, dtype=np.float32).ravel()
        if c.size != self.image_len:
            raise ContractError(f"centroid length {c.size} != image_len {self.image_len}")
        if c.size and c.min() < 0:
            raise ContractError("centroids must be non-negative")
        if self._size == len(self._rows):
            grown = np.zeros((2 * len(self._rows), self.image_len), dtype=np.float32)
            grown[: self._size] = self._rows[: self._size]
            self._rows = grown
        self._rows[self._size] = c
        self._size += 1

    def copy(self) -> Dictionary:
        d = Dictionary(self.image_len)
        d._rows = self._rows.copy()
        d._size = self._size
        return d

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dictionary):
            return NotImplemented
        return self.image_len == other.image_len and np.array_equal(self.centroids, other.centroids)

    def to_bytes(self) -> bytes:
        header = _DICT_HEADER.pack(DICT_MAGIC, DICT_VERSION, self.image_len, self._size)
        return header + self.centroids.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> Dictionary:
        if len(blob) < _DICT_HEADER.size:
            raise ContractError("truncated dictionary checkpoint")
        magic, version, image_len, count = _DICT_HEADER.unpack_from(blob)
        if magic != DICT_MAGIC:
            raise ContractError("not a dictionary checkpoint (bad magic)")
        if version != DICT_VERSION:
            raise ContractError(f"unsupported dictionary version {version}")
        body = blob[_DICT_HEADER.size:]
        if len(body) != 4 * image_len * count:
            raise ContractError("dictionary checkpoint size does not match header")
        rows = np.frombuffer(body, dtype="<f4").reshape(count, image_len)
        return cls(image_len, rows)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Dictionary:
        return cls.from_bytes(Path(path).read_bytes())


def _check_len(x: np.ndarray, d: Dictionary) -> None:
    if x.size != d.image_len:
        raise ContractError(f"observation length {x.size} != dictionary image_len {d.image_len}")


def drsc(x, d: Dictionary, cfg: CompressorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Encode ``x`` and also return the residual left after encoding.

    Each iteration picks the unselected centroid with the smallest L1 distance
    to the current residual (lowest index on ties), subtracts it and clips the
    residual at zero. Stops when the residual sum is <= epsilon, when omega
    bits are set, or when every centroid has been used.
    """
    x = np.asarray(x, dtype=np.float32).ravel()
    _check_len(x, d)
    n = len(d)
    code = np.zeros(n, dtype=np.uint8)
    residual = x.copy()
    if n == 0:
        return code, residual
    rows = d.centroids
    limit = min(cfg.omega, n)
    omega = 0
    total = float(residual.sum())
    while total > cfg.epsilon and omega < limit:
        dist = np.add.reduce(np.abs(rows - residual), axis=1)
        if omega:
            dist[code.view(bool)] = np.inf
        pick = int(dist.argmin())
        code[pick] = 1
        omega += 1
        np.subtract(residual, rows[pick], out=residual)
        np.maximum(residual, 0.0, out=residual)
        total = float(residual.sum())
    return code, residual


def drsc_encode(x, d: Dictionary, cfg: CompressorConfig) -> np.ndarray:
    """Binary sparse code of ``x`` against ``d`` (one bit per centroid)."""
    return drsc(x, d, cfg)[0]


class FrozenEncoder:
    """DRSC against a dictionary that stays fixed for the encoder's lifetime.

    Results are memoized by observation bytes (bounded cache), which pays off
    when the same screens recur across episodes of a generation.
    """

    def __init__(self, d: Dictionary, cfg: CompressorConfig, cache_size: int = 4096):
        self.dictionary = d
        self.cfg = cfg
        self.cache_size = cache_size
        self._cache: dict[bytes, tuple[np.ndarray, float]] = {}

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        """Return (code, residual sum); the code array is shared, do not modify it."""
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            code, residual = drsc(x, self.dictionary, self.cfg)
            code.flags.writeable = False
            hit = (code, float(residual.sum()))
            if len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit


def reconstruct(code, d: Dictionary) -> np.ndarray:
    code = np.asarray(code)
    if code.size != len(d):
        raise ContractError(f"code length {code.size} != dictionary size {len(d)}")
    out = np.zeros(d.image_len, dtype=np.float32)
    for i in np.flatnonzero(code):
        out += d.centroids[i]
    return out


def clipped_residual(x, recon) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    recon = np.asarray(recon, dtype=np.float32)
    if x.shape != recon.shape:
        raise ContractError(f"shape mismatch {x.shape} vs {recon.shape}")
    return np.maximum(x - recon, 0.0)


def idvq_train_step(x, d: Dictionary, cfg: CompressorConfig) -> Dictionary:
    """Append the clipped reconstruction residual of ``x`` when it exceeds delta.

    ``d`` is grown in place and returned.
    """
    x = np.asarray(x, dtype=np.float32).ravel()
    code = drsc_encode(x, d, cfg)
    residual = clipped_residual(x, reconstruct(code, d))
    if np.abs(residual).sum(dtype=np.float64) > cfg.delta:
        d.append(residual)
    return d


def idvq_train(ts: TrainingSet, d: Dictionary, cfg: CompressorConfig) -> Dictionary:
    for x in ts.samples:
        idvq_train_step(x, d, cfg)
    return d


@dataclass
class TrainingSet:
    """Per-generation sample of observations kept for dictionary training.

    Uniform reservoir sampling by default. With ``prioritized`` the set keeps
    the observations with the largest post-encoding residual instead.
    """

    capacity: int
    prioritized: bool = False
    samples: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    seen_count: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ContractError("capacity must be >= 1")

    def clear(self) -> None:
        self.samples.clear()
        self.residuals.clear()
        self.seen_count = 0


def training_set_offer(ts: TrainingSet, x, rng: np.random.Generator, residual: float = 0.0) -> TrainingSet:
    """Offer one observation to the training set (Algorithm R reservoir)."""
    ts.seen_count += 1
    if len(ts.samples) < ts.capacity:
        ts.samples.append(np.array(x, dtype=np.float32, copy=True))
        ts.residuals.append(float(residual))
        return ts
    if ts.prioritized:
        worst = int(np.argmin(ts.residuals))
        if residual > ts.residuals[worst]:
            ts.samples[worst] = np.array(x, dtype=np.float32, copy=True)
            ts.residuals[worst] = float(residual)
        return ts
    j = int(rng.integers(ts.seen_count))
    if j < ts.capacity:
        ts.samples[j] = np.array(x, dtype=np.float32, copy=True)
        ts.residuals[j] = float(residual)
    return ts


def train_and_clear(ts: TrainingSet, d: Dictionary, cfg: CompressorConfig) -> int:
    """Run IDVQ over the collected set, clear it, return the number of new centroids."""
    before = len(d)
    if ts.residuals:
        log.debug(
            "training on %d/%d observations, residual mean %.4f max %.4f",
            len(ts.samples), ts.seen_count, np.mean(ts.residuals), np.max(ts.residuals),
        )
    idvq_train(ts, d, cfg)
    ts.clear()
    return len(d) - before

"""Exponential Natural Evolution Strategy with an ask/tell interface.

The search distribution is N(mu, A^T A). Samples are ``z = mu + A^T s`` with
``s ~ N(0, I)``, and updates are computed from the stored ``s`` draws in
exponential local coordinates. ``A`` is any square root of the covariance;
it starts upper triangular and stays so under dimension insertion, but the
multiplicative update does not preserve triangularity.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compressor import ContractError

DIST_MAGIC = b"XNESDIST"
DIST_VERSION = 1
_DIST_HEADER = struct.Struct("<8sIII")


@dataclass
class SearchDistribution:
    mu: np.ndarray
    a_factor: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).ravel()
        self.a_factor = np.asarray(self.a_factor, dtype=np.float64)
        p = self.mu.size
        if self.a_factor.shape != (p, p):
            raise ContractError(f"factor shape {self.a_factor.shape} does not match dimension {p}")

    @classmethod
    def isotropic(cls, mu, sigma: float = 1.0) -> SearchDistribution:
        mu = np.asarray(mu, dtype=np.float64).ravel()
        return cls(mu, sigma * np.eye(mu.size))

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def sigma(self) -> np.ndarray:
        """Covariance matrix A^T A."""
        return self.a_factor.T @ self.a_factor

    def triangular_factor(self) -> np.ndarray:
        """Upper-triangular U with U^T U equal to the covariance (Cholesky)."""
        return np.linalg.cholesky(self.sigma).T

    def copy(self) -> SearchDistribution:
        return SearchDistribution(self.mu.copy(), self.a_factor.copy())

    def to_bytes(self) -> bytes:
        p = self.dim
        header = _DIST_HEADER.pack(DIST_MAGIC, DIST_VERSION, p, 8)
        return header + self.mu.astype("<f8").tobytes() + self.a_factor.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> SearchDistribution:
        if len(blob) < _DIST_HEADER.size:
            raise ContractError("truncated distribution checkpoint")
        magic, version, p, itemsize = _DIST_HEADER.unpack_from(blob)
        if magic != DIST_MAGIC:
            raise ContractError("not a distribution checkpoint (bad magic)")
        if version != DIST_VERSION:
            raise ContractError(f"unsupported distribution version {version}")
        dtype = {4: "<f4", 8: "<f8"}.get(itemsize)
        if dtype is None:
            raise ContractError(f"unsupported float width {itemsize}")
        body = blob[_DIST_HEADER.size:]
        if len(body) != itemsize * (p + p * p):
            raise ContractError("distribution checkpoint size does not match header")
        values = np.frombuffer(body, dtype=dtype).astype(np.float64)
        return cls(values[:p], values[p:].reshape(p, p))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> SearchDistribution:
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class NesHyper:
    lam: int
    eta_mu: float
    eta_a: float
    utilities: np.ndarray


def shaped_utilities(lam: int) -> np.ndarray:
    """Rank-based zero-sum utilities, best rank first."""
    ranks = np.arange(1, lam + 1)
    raw = np.maximum(0.0, math.log(lam / 2 + 1) - np.log(ranks))
    return raw / raw.sum() - 1.0 / lam


def default_hyper(p: int, pop_scale: float = 1.0, lr_scale: float = 1.0, eta_mu: float = 1.0) -> NesHyper:
    """Standard xNES population size and learning rates for dimension ``p``, scaled."""
    if p < 1:
        raise ContractError("dimension must be >= 1")
    lam = max(2, int(math.floor(pop_scale * (4 + math.floor(3 * math.log(p))) + 0.5)))
    eta_a = lr_scale * (9 + 3 * math.log(p)) / (5 * p * math.sqrt(p))
    return NesHyper(lam=lam, eta_mu=eta_mu, eta_a=eta_a, utilities=shaped_utilities(lam))


def rehyper_after_expand(dist: SearchDistribution, pop_scale: float, lr_scale: float, eta_mu: float = 1.0) -> NesHyper:
    return default_hyper(dist.dim, pop_scale, lr_scale, eta_mu)


@dataclass
class SampleBatch:
    std_normals: np.ndarray
    genomes: np.ndarray


def ask(dist: SearchDistribution, hyper: NesHyper, rng: np.random.Generator) -> SampleBatch:
    s = rng.standard_normal((hyper.lam, dist.dim))
    return SampleBatch(std_normals=s, genomes=dist.mu + s @ dist.a_factor)


def rank_utilities(fitnesses, utilities) -> np.ndarray:
    """Utility per individual (maximization); tied fitnesses share the mean utility of their ranks."""
    f = np.asarray(fitnesses, dtype=np.float64)
    order = np.argsort(-f, kind="stable")
    out = np.empty_like(f)
    sorted_f = f[order]
    start = 0
    while start < f.size:
        stop = start + 1
        while stop < f.size and sorted_f[stop] == sorted_f[start]:
            stop += 1
        out[order[start:stop]] = utilities[start:stop].mean()
        start = stop
    return out


def _expm_sym(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    return (v * np.exp(w)) @ v.T


def tell(dist: SearchDistribution, hyper: NesHyper, batch: SampleBatch, fitnesses) -> SearchDistribution:
    f = np.asarray(fitnesses, dtype=np.float64).ravel()
    if f.size != hyper.lam or batch.std_normals.shape[0] != hyper.lam:
        raise ContractError(f"expected {hyper.lam} fitnesses, got {f.size}")
    if not np.all(np.isfinite(f)):
        raise ValueError("fitness values must be finite")
    u = rank_utilities(f, hyper.utilities)
    s = batch.std_normals
    p = dist.dim
    grad_mu = u @ s
    grad_m = (s.T * u) @ s - u.sum() * np.eye(p)
    mu = dist.mu + hyper.eta_mu * (grad_mu @ dist.a_factor)
    # z = mu + A^T s, so the local-coordinate update acts on A from the left.
    a = _expm_sym(0.5 * hyper.eta_a * grad_m) @ dist.a_factor
    return SearchDistribution(mu, a)


def expand_dims(dist: SearchDistribution, insert_positions, eps_var: float = 1e-4) -> SearchDistribution:
    """Insert new coordinates with zero mean, zero covariance and variance ``eps_var``.

    ``insert_positions`` index the enlarged vector. Old means and covariances
    are carried over exactly.
    """
    if eps_var <= 0:
        raise ContractError("eps_var must be positive")
    positions = sorted(int(i) for i in insert_positions)
    new_p = dist.dim + len(positions)
    if len(set(positions)) != len(positions) or (positions and (positions[0] < 0 or positions[-1] >= new_p)):
        raise ContractError(f"invalid insert positions {positions} for dimension {new_p}")
    is_new = np.zeros(new_p, dtype=bool)
    is_new[positions] = True
    old = np.flatnonzero(~is_new)
    mu = np.zeros(new_p)
    mu[old] = dist.mu
    a = np.zeros((new_p, new_p))
    a[np.ix_(old, old)] = dist.a_factor
    a[positions, positions] = math.sqrt(eps_var)
    return SearchDistribution(mu, a)

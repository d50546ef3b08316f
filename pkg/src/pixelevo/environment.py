"""Pixel environments: adapter protocol, preprocessing, frameskip, synthetic games."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .compressor import ContractError


class EnvError(RuntimeError):
    """An environment adapter broke its protocol."""


class PixelAdapter(Protocol):
    """Anything that can play a pixel game one raw frame at a time."""

    action_count: int
    frame_shape: tuple[int, int]  # (height, width) of the RGB frames

    def reset(self, seed: int | None = None) -> np.ndarray: ...

    def raw_step(self, action: int) -> tuple[np.ndarray, float, bool]: ...


@dataclass(frozen=True)
class EnvSpec:
    action_count: int
    obs_width: int
    obs_height: int
    max_interactions: int = 200

    def __post_init__(self):
        if min(self.action_count, self.obs_width, self.obs_height, self.max_interactions) < 1:
            raise ContractError(f"invalid environment spec {self}")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool


@functools.lru_cache(maxsize=64)
def _block_edges(src: int, target: int) -> np.ndarray:
    block = math.ceil(src / target)
    if math.ceil(src / block) != target:
        raise ContractError(f"cannot tile {src} source pixels into {target} blocks")
    edges = np.arange(0, src, block)
    edges.flags.writeable = False
    return edges


def preprocess(frame, target_w: int, target_h: int) -> np.ndarray:
    """Grayscale (channel mean / 255) then non-overlapping block averaging.

    Blocks are ceil(src/target) pixels on a side; the last row/column of
    blocks may be smaller. Returns a row-major float32 vector of
    ``target_w * target_h`` values in [0, 1].
    """
    rgb = np.asarray(frame)
    if rgb.size == 0:
        raise ContractError("empty frame")
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ContractError(f"expected HxWx3 frame, got shape {rgb.shape}")
    h, w = rgb.shape[:2]
    rows, cols = _block_edges(h, target_h), _block_edges(w, target_w)
    if h % target_h == 0 and w % target_w == 0:
        bh, bw = h // target_h, w // target_w
        sums = rgb.reshape(target_h, bh, target_w, bw, 3).sum(axis=(1, 3, 4), dtype=np.float64)
        return np.minimum(sums / (765.0 * bh * bw), 1.0).astype(np.float32).ravel()
    gray = rgb.sum(axis=2, dtype=np.float64) / 765.0
    sums = np.add.reduceat(np.add.reduceat(gray, rows, axis=0), cols, axis=1)
    counts = np.outer(np.diff(np.append(rows, h)), np.diff(np.append(cols, w)))
    return np.clip(sums / counts, 0.0, 1.0).astype(np.float32).ravel()


def write_pgm(path, pixels, width: int, height: int) -> None:
    """Write a [0, 1] image as binary (P5) portable graymap."""
    data = np.round(np.asarray(pixels, dtype=np.float64).reshape(height, width) * 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode() + data.tobytes())


def read_image(path) -> np.ndarray:
    """Read a PGM (P2/P5) or whitespace-separated float rows into a flat [0, 1] vector."""
    raw = Path(path).read_bytes()
    if raw[:2] in (b"P2", b"P5"):
        return _read_pgm(raw)
    rows = [line.split() for line in raw.decode().splitlines() if line.strip() and not line.startswith("#")]
    return np.array([float(v) for row in rows for v in row], dtype=np.float32)


def _read_pgm(raw: bytes) -> np.ndarray:
    tokens, pos = [], 2
    while len(tokens) < 3:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        tokens.append(int(raw[pos:end]))
        pos = end
    width, height, maxval = tokens
    if raw[:2] == b"P5":
        dtype = np.uint8 if maxval < 256 else ">u2"
        values = np.frombuffer(raw[pos + 1:], dtype=dtype, count=width * height)
    else:
        values = np.array(raw[pos:].split()[: width * height], dtype=np.int64)
    if values.size != width * height:
        raise ContractError("truncated graymap")
    return (values.astype(np.float64) / maxval).astype(np.float32)


class PixelEnv:
    """Wraps an adapter with preprocessing, frameskip and an interaction cap."""

    def __init__(self, adapter: PixelAdapter, obs_width: int, obs_height: int,
                 max_interactions: int = 200, noop_action: int = 0, dump_dir=None):
        self.adapter = adapter
        self.spec = EnvSpec(int(adapter.action_count), obs_width, obs_height, max_interactions)
        h, w = adapter.frame_shape
        try:
            _block_edges(h, obs_height)
            _block_edges(w, obs_width)
        except ContractError as exc:
            raise EnvError(f"adapter frames {h}x{w} incompatible with observation size: {exc}") from exc
        self.noop_action = noop_action
        self.interactions = 0
        self.dump_dir = Path(dump_dir) if dump_dir else None
        self._frames_dumped = 0

    @property
    def action_count(self) -> int:
        return self.spec.action_count

    def _observe(self, frame) -> np.ndarray:
        frame = np.asarray(frame)
        if frame.shape != (*self.adapter.frame_shape, 3):
            raise EnvError(f"adapter returned frame {frame.shape}, declared {self.adapter.frame_shape}")
        obs = preprocess(frame, self.spec.obs_width, self.spec.obs_height)
        if self.dump_dir is not None:
            self.dump_dir.mkdir(parents=True, exist_ok=True)
            write_pgm(self.dump_dir / f"frame_{self._frames_dumped:06d}.pgm", obs,
                      self.spec.obs_width, self.spec.obs_height)
            self._frames_dumped += 1
        return obs

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.interactions = 0
        return self._observe(self.adapter.reset(seed))

    def step(self, action: int, frameskip: int = 5) -> StepResult:
        """Apply ``action`` then ``frameskip - 1`` NOOPs, summing rewards."""
        if not 0 <= action < self.action_count:
            raise ContractError(f"action {action} out of range [0, {self.action_count})")
        if frameskip < 1:
            raise ContractError("frameskip must be >= 1")
        total, terminal, frame = 0.0, False, None
        for i in range(frameskip):
            out = self.adapter.raw_step(action if i == 0 else self.noop_action)
            try:
                frame, reward, terminal = out
            except (TypeError, ValueError) as exc:
                raise EnvError("raw_step must return (frame, reward, terminal)") from exc
            total += float(reward)
            if terminal:
                break
        self.interactions += 1
        return StepResult(self._observe(frame), total, bool(terminal))


# Synthetic games. Actions: 0 NOOP, 1 up, 2 down, 3 left, 4 right.
MOVES = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))


class _GridGame:
    action_count = 5

    def __init__(self, grid: int = 10, cell_px: int = 2, seed: int = 0):
        if grid < 2 or cell_px < 1:
            raise ContractError("grid must be >= 2 and cell_px >= 1")
        self.grid, self.cell_px = grid, cell_px
        self.frame_shape = (grid * cell_px, grid * cell_px)
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def _move(self, pos, action):
        dr, dc = MOVES[action]
        top = self.grid - 1
        return (min(max(pos[0] + dr, 0), top), min(max(pos[1] + dc, 0), top))

    def _random_cell(self, rng):
        r, c = rng.integers(self.grid, size=2)
        return int(r), int(c)

    def _render(self, sprites) -> np.ndarray:
        img = np.zeros((*self.frame_shape, 3), dtype=np.uint8)
        k = self.cell_px
        for (r, c), value in sprites:
            cell = img[r * k:(r + 1) * k, c * k:(c + 1) * k]
            np.maximum(cell, value, out=cell)
        return img


class DotChaser(_GridGame):
    """Steer the agent (white) to a target (gray) fixed per game seed.

    Reward is +1 for a move that shortens the Manhattan distance to the target
    and -1 for one that lengthens it; reaching the target ends the episode.
    """

    AGENT, TARGET = 255, 128

    def __init__(self, grid: int = 10, cell_px: int = 2, seed: int = 0):
        super().__init__(grid, cell_px, seed)
        self.target = self._random_cell(self._rng)
        self.agent = self.target

    def distance(self) -> int:
        return abs(self.agent[0] - self.target[0]) + abs(self.agent[1] - self.target[1])

    def frame(self) -> np.ndarray:
        return self._render([(self.target, self.TARGET), (self.agent, self.AGENT)])

    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed) if seed is not None else self._rng
        while True:
            self.agent = self._random_cell(rng)
            if self.distance() > 0:
                self._frame = self.frame()
                return self._frame

    def raw_step(self, action):
        before = self.distance()
        moved = self._move(self.agent, action)
        if moved != self.agent:
            self.agent = moved
            self._frame = self.frame()
        after = self.distance()
        reward = float((before > after) - (before < after))
        return self._frame, reward, after == 0

    def greedy_action(self) -> int:
        dr, dc = self.target[0] - self.agent[0], self.target[1] - self.agent[1]
        if abs(dr) >= abs(dc) and dr != 0:
            return 2 if dr > 0 else 1
        if dc != 0:
            return 4 if dc > 0 else 3
        return 0


class Avoider(_GridGame):
    """Dodge blocks falling down the columns; +1 per survived frame."""

    AGENT, BLOCK = 255, 160

    def __init__(self, grid: int = 10, cell_px: int = 2, seed: int = 0, spawn_prob: float = 0.3):
        super().__init__(grid, cell_px, seed)
        self.spawn_prob = spawn_prob
        self.agent = (grid - 1, grid // 2)
        self.blocks: list[tuple[int, int]] = []
        self._episode_rng = self._rng

    def frame(self) -> np.ndarray:
        return self._render([(b, self.BLOCK) for b in self.blocks] + [(self.agent, self.AGENT)])

    def reset(self, seed=None) -> np.ndarray:
        self._episode_rng = np.random.default_rng(seed) if seed is not None else self._rng
        self.agent = (self.grid - 1, int(self._episode_rng.integers(self.grid)))
        self.blocks = []
        return self.frame()

    def raw_step(self, action):
        self.agent = self._move(self.agent, action)
        if self.agent in self.blocks:
            return self.frame(), 0.0, True
        self.blocks = [(r + 1, c) for r, c in self.blocks if r + 1 < self.grid]
        if self._episode_rng.random() < self.spawn_prob:
            self.blocks.append((0, int(self._episode_rng.integers(self.grid))))
        if self.agent in self.blocks:
            return self.frame(), 0.0, True
        return self.frame(), 1.0, False


GAMES = {"dot_chaser": DotChaser, "avoider": Avoider}


def make_env(name: str, grid: int = 10, cell_px: int = 2, seed: int = 0,
             max_interactions: int = 200, dump_dir=None) -> PixelEnv:
    try:
        game = GAMES[name](grid=grid, cell_px=cell_px, seed=seed)
    except KeyError:
        raise ContractError(f"unknown environment {name!r}; choose from {sorted(GAMES)}") from None
    return PixelEnv(game, obs_width=grid, obs_height=grid,
                    max_interactions=max_interactions, dump_dir=dump_dir)

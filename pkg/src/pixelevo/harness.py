"""Training loop tying environment, compressor, controller and optimizer together.

Each generation: sample genomes, evaluate them episodically while encoding
observations against the frozen dictionary, update the search distribution,
then train the dictionary on the observations collected and grow the network
input and the distribution to match.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import compressor as cmp
from .compressor import CompressorConfig, ContractError, Dictionary, TrainingSet
from .controller import Controller, ControllerShape, input_insert_positions
from .environment import PixelEnv, make_env
from .optimizer import (NesHyper, SearchDistribution, ask, default_hyper, expand_dims,
                        rehyper_after_expand, shaped_utilities, tell)

log = logging.getLogger(__name__)

METRICS_HEADER = ["gen", "best", "mean", "min", "dict_size", "params", "lambda", "seconds"]
CKPT_MAGIC = "pixelevo-checkpoint"
CKPT_VERSION = 1
# Keys that may change between a checkpoint and its resumption.
_RESUMABLE_KEYS = {"generations", "checkpoint_every", "log_wall_time"}


@dataclass
class RunConfig:
    generations: int = 100
    evals_per_individual: int = 5
    max_interactions: int = 200
    frameskip: int = 5
    pop_scale: float = 1.5
    lr_scale: float = 0.5
    eta_mu: float = 1.0
    init_sigma: float = 1.0
    delta: float = 0.005
    epsilon: float = 0.005
    omega: int = 10
    train_set_capacity: int = 50
    prioritized_training: bool = False
    env: str = "dot_chaser"
    grid: int = 10
    cell_px: int = 2
    seed: int = 0
    activation: str = "tanh"
    eps_var: float = 1e-4
    recompute_hyper: bool = True
    checkpoint_every: int = 10
    log_wall_time: bool = True

    def __post_init__(self):
        if self.generations < 0 or self.evals_per_individual < 1:
            raise ContractError("generations must be >= 0 and evals_per_individual >= 1")
        if self.max_interactions < 1 or self.frameskip < 1:
            raise ContractError("max_interactions and frameskip must be >= 1")
        self.compressor_config()

    def compressor_config(self) -> CompressorConfig:
        return CompressorConfig(self.delta, self.epsilon, self.omega,
                                self.train_set_capacity, self.prioritized_training)

    def config_hash(self) -> str:
        keyed = {k: v for k, v in dataclasses.asdict(self).items() if k not in _RESUMABLE_KEYS}
        return hashlib.sha256(json.dumps(keyed, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str, **overrides) -> RunConfig:
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or key not in types:
                raise ContractError(f"config line {lineno}: unknown or malformed entry {line!r}")
            values[key] = _coerce(raw, types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> RunConfig:
        return cls.from_text(Path(path).read_text(), **overrides)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(self).items())


def _coerce(raw: str, typ: str):
    if typ == "bool":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ContractError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    return {"int": int, "float": float}.get(typ, str)(raw)


@dataclass
class GenerationRecord:
    gen: int
    best: float
    mean: float
    min: float
    dict_size: int
    params: int
    lam: int
    seconds: float

    def row(self, with_time: bool = True) -> list[str]:
        secs = f"{self.seconds:.3f}" if with_time else "0"
        return [str(self.gen), repr(self.best), repr(self.mean), repr(self.min),
                str(self.dict_size), str(self.params), str(self.lam), secs]


@dataclass
class RunState:
    cfg: RunConfig
    gen: int
    dictionary: Dictionary
    shape: ControllerShape
    dist: SearchDistribution
    hyper: NesHyper
    rng: np.random.Generator
    training_set: TrainingSet = field(default=None)

    def __post_init__(self):
        if self.training_set is None:
            self.training_set = TrainingSet(self.cfg.train_set_capacity, self.cfg.prioritized_training)

    def copy(self) -> RunState:
        return RunState(self.cfg, self.gen, self.dictionary.copy(), self.shape, self.dist.copy(),
                        self.hyper, copy.deepcopy(self.rng), copy.deepcopy(self.training_set))

    def check_consistency(self) -> None:
        if self.shape.n_inputs != len(self.dictionary):
            raise ContractError(f"controller has {self.shape.n_inputs} inputs, dictionary {len(self.dictionary)}")
        if self.dist.dim != self.shape.n_params:
            raise ContractError(f"distribution dimension {self.dist.dim} != {self.shape.n_params} parameters")


def build_env(cfg: RunConfig, dump_dir=None) -> PixelEnv:
    return make_env(cfg.env, grid=cfg.grid, cell_px=cfg.cell_px, seed=cfg.seed,
                    max_interactions=cfg.max_interactions, dump_dir=dump_dir)


def init_state(cfg: RunConfig, env: PixelEnv | None = None) -> RunState:
    env = env or build_env(cfg)
    image_len = env.spec.obs_width * env.spec.obs_height
    shape = ControllerShape(0, env.action_count)
    dist = SearchDistribution.isotropic(np.zeros(shape.n_params), cfg.init_sigma)
    hyper = default_hyper(dist.dim, cfg.pop_scale, cfg.lr_scale, cfg.eta_mu)
    return RunState(cfg, 0, Dictionary(image_len), shape, dist, hyper, np.random.default_rng(cfg.seed))


def run_episode(controller: Controller, env: PixelEnv, encoder: cmp.FrozenEncoder, cfg: RunConfig,
                seed=None, collector=None) -> float:
    obs = env.reset(seed)
    controller.reset()
    total = 0.0
    for _ in range(cfg.max_interactions):
        code, residual = encoder(obs)
        if collector is not None:
            collector(obs, residual)
        result = env.step(controller.activate(code), cfg.frameskip)
        total += result.reward
        if result.terminal:
            break
        obs = result.observation
    return total


def evaluate_individual(genome, env: PixelEnv, dictionary: Dictionary | cmp.FrozenEncoder,
                        shape: ControllerShape, cfg: RunConfig, episode_seeds=None, collector=None) -> float:
    """Mean cumulative reward of ``genome`` over ``cfg.evals_per_individual`` episodes.

    ``dictionary`` may be passed pre-wrapped in a FrozenEncoder to share its
    cache between individuals.
    """
    encoder = dictionary if isinstance(dictionary, cmp.FrozenEncoder) else \
        cmp.FrozenEncoder(dictionary, cfg.compressor_config())
    if shape.n_inputs != len(encoder.dictionary):
        raise ContractError("controller input size does not match dictionary size")
    controller = Controller(genome, shape, cfg.activation)
    if episode_seeds is None:
        episode_seeds = [None] * cfg.evals_per_individual
    scores = [run_episode(controller, env, encoder, cfg, seed, collector) for seed in episode_seeds]
    return float(np.mean(scores))


def run_generation(state: RunState, env: PixelEnv) -> tuple[RunState, GenerationRecord]:
    """Advance one generation. ``state`` itself is never modified."""
    start = time.perf_counter()
    new = state.copy()
    cfg = new.cfg
    new.check_consistency()
    seeds = [int(s) for s in new.rng.integers(2**31, size=cfg.evals_per_individual)]
    batch = ask(new.dist, new.hyper, new.rng)
    ts, rng = new.training_set, new.rng

    def collect(obs, residual):
        cmp.training_set_offer(ts, obs, rng, residual)

    encoder = cmp.FrozenEncoder(new.dictionary, cfg.compressor_config())
    fitness = np.array([
        evaluate_individual(g, env, encoder, new.shape, cfg, seeds, collect)
        for g in batch.genomes
    ])
    lam = new.hyper.lam
    new.dist = tell(new.dist, new.hyper, batch, fitness)

    grown = cmp.train_and_clear(ts, new.dictionary, cfg.compressor_config())
    if grown:
        positions = input_insert_positions(new.shape, grown)
        new.dist = expand_dims(new.dist, positions, cfg.eps_var)
        new.shape = ControllerShape(new.shape.n_inputs + grown, new.shape.n_neurons)
        if cfg.recompute_hyper:
            new.hyper = rehyper_after_expand(new.dist, cfg.pop_scale, cfg.lr_scale, cfg.eta_mu)
    new.gen += 1
    new.check_consistency()
    record = GenerationRecord(new.gen, float(fitness.max()), float(fitness.mean()), float(fitness.min()),
                              len(new.dictionary), new.dist.dim, lam, time.perf_counter() - start)
    log.info("gen %d best %.3f mean %.3f dict %d params %d", record.gen, record.best,
             record.mean, record.dict_size, record.params)
    return new, record


def save_checkpoint(state: RunState, path) -> None:
    meta = {
        "magic": CKPT_MAGIC,
        "version": CKPT_VERSION,
        "config": dataclasses.asdict(state.cfg),
        "config_hash": state.cfg.config_hash(),
        "gen": state.gen,
        "shape": [state.shape.n_inputs, state.shape.n_neurons],
        "hyper": {"lam": state.hyper.lam, "eta_mu": state.hyper.eta_mu, "eta_a": state.hyper.eta_a},
        "rng": state.rng.bit_generator.state,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr("meta.json", json.dumps(meta, indent=1))
        zf.writestr("dictionary.bin", state.dictionary.to_bytes())
        zf.writestr("distribution.bin", state.dist.to_bytes())
    tmp.replace(path)


def load_checkpoint(path, cfg: RunConfig | None = None) -> RunState:
    """Load a checkpoint; if ``cfg`` is given its hash must match the stored one."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            dict_blob = zf.read("dictionary.bin")
            dist_blob = zf.read("distribution.bin")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise ContractError(f"corrupt checkpoint {path}: {exc}") from exc
    if meta.get("magic") != CKPT_MAGIC or meta.get("version") != CKPT_VERSION:
        raise ContractError(f"unsupported checkpoint format in {path}")
    stored = RunConfig(**meta["config"])
    if stored.config_hash() != meta["config_hash"]:
        raise ContractError("checkpoint config hash does not match its stored config")
    if cfg is None:
        cfg = stored
    elif cfg.config_hash() != meta["config_hash"]:
        raise ContractError("config differs from the one the checkpoint was created with")
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    h = meta["hyper"]
    hyper = NesHyper(h["lam"], h["eta_mu"], h["eta_a"], shaped_utilities(h["lam"]))
    state = RunState(cfg, meta["gen"], Dictionary.from_bytes(dict_blob),
                     ControllerShape(*meta["shape"]), SearchDistribution.from_bytes(dist_blob), hyper, rng)
    state.check_consistency()
    return state


def train(cfg: RunConfig, out_dir, resume=None, plots: bool = False) -> RunState:
    """Run ``cfg.generations`` generations, writing metrics.csv and checkpoint.ckpt to ``out_dir``.

    When resuming, ``cfg.generations`` is the total target, counting the
    generations already done.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / "metrics.csv"
    ckpt = out / "checkpoint.ckpt"
    env = build_env(cfg)
    if resume is not None:
        state = load_checkpoint(resume, cfg)
        if not metrics.exists():
            _write_rows(metrics, [METRICS_HEADER], "w")
    else:
        state = init_state(cfg, env)
        _write_rows(metrics, [METRICS_HEADER], "w")
    save_checkpoint(state, ckpt)
    while state.gen < cfg.generations:
        state, record = run_generation(state, env)
        _write_rows(metrics, [record.row(cfg.log_wall_time)], "a")
        if state.gen % cfg.checkpoint_every == 0 or state.gen == cfg.generations:
            save_checkpoint(state, ckpt)
    if plots:
        from .report import plot_metrics
        plot_metrics(metrics, out)
    return state


def _write_rows(path: Path, rows, mode: str) -> None:
    with path.open(mode, newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def read_metrics(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate_checkpoint(path, episodes: int = 5, seed: int = 0) -> dict:
    """Replay the distribution mean of a checkpoint and report the scores."""
    state = load_checkpoint(path)
    env = build_env(state.cfg)
    controller = Controller(state.dist.mu, state.shape, state.cfg.activation)
    seeds = np.random.default_rng(seed).integers(2**31, size=episodes)
    encoder = cmp.FrozenEncoder(state.dictionary, state.cfg.compressor_config())
    scores = [run_episode(controller, env, encoder, state.cfg, int(s)) for s in seeds]
    return {"episodes": scores, "mean": float(np.mean(scores)) if scores else 0.0,
            "generation": state.gen, "dict_size": len(state.dictionary)}


def random_policy_scores(cfg: RunConfig, episodes: int = 50, seed: int = 0) -> list[float]:
    """Episode rewards of a uniformly random action policy under ``cfg``'s environment and budget."""
    env = build_env(cfg)
    rng = np.random.default_rng(seed)
    scores = []
    for ep_seed in rng.integers(2**31, size=episodes):
        env.reset(int(ep_seed))
        total = 0.0
        while env.interactions < cfg.max_interactions:
            res = env.step(int(rng.integers(env.action_count)), cfg.frameskip)
            total += res.reward
            if res.terminal:
                break
        scores.append(total)
    return scores

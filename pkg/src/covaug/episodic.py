"""Episodic meta-training of the translation GANs."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import diffengine as de
from . import ganstack as gs
from .datakit import LabeledFeatureSet
from .errors import ArgumentError, NumericalError
from .protospace import PrototypeTable, build_map, compute_prototypes

log = logging.getLogger(__name__)

LOG_HEADER = ["episode", "lr", "adv_n", "adv_b", "cyc", "cov", "total_g", "total_d"]


@dataclass
class TrainConfig:
    variant: str = "ccov"
    episodes: int = 100000
    batch_size: int = 1000        # B
    n_way: int = 20               # N_b meta-novel classes per episode
    k_shot: int = 10              # K_b shots per meta-novel class
    lam_cyc: float = 5.0
    lam_cov: float = 0.5
    m: int = 10                   # Ky Fan truncation rank
    noise_dim: int = 100          # Z
    n_components: int = 50        # C
    hidden: int = 512
    lr0: float = 1e-4
    anneal_every: int = 20000
    anneal_factor: float = 0.5
    nbs: str = "soft"
    nbs_k: int = 10
    seed: int = 0
    nonsaturating: bool = False
    class_uniform_base: bool = False
    svd_method: str = "jacobi"    # or "lapack" for speed

    def __post_init__(self):
        if self.variant not in gs.VARIANTS:
            raise ArgumentError(f"unknown variant {self.variant!r}")
        for name in ("batch_size", "n_way", "k_shot", "m", "noise_dim", "n_components",
                     "hidden", "anneal_every", "nbs_k"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be positive")
        if self.episodes < 0:
            raise ArgumentError("episodes must be >= 0")
        if self.batch_size < self.n_way * self.k_shot:
            raise ArgumentError("batch_size must be at least n_way * k_shot")
        if not 0 < self.anneal_factor <= 1:
            raise ArgumentError("anneal_factor must lie in (0, 1]")
        if self.nbs not in ("soft", "hard"):
            raise ArgumentError(f"nbs must be soft or hard, got {self.nbs!r}")
        if self.svd_method not in ("jacobi", "lapack"):
            raise ArgumentError(f"unknown svd_method {self.svd_method!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def paper_config(**overrides) -> TrainConfig:
    """Full-scale hyperparameters."""
    return TrainConfig(**overrides)


def desk_config(**overrides) -> TrainConfig:
    """Shrunk batch, width and episode count for CPU runs."""
    base = dict(episodes=3000, batch_size=60, n_way=4, k_shot=5, hidden=64, noise_dim=8,
                n_components=10, lr0=1e-3, anneal_every=1000)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class EpisodeBatch:
    novel: LabeledFeatureSet
    base: LabeledFeatureSet
    tmap: object
    protos: PrototypeTable

    def __len__(self):
        return len(self.novel) + len(self.base)


def lr_schedule(cfg: TrainConfig, episode: int) -> float:
    if episode < 0:
        raise ArgumentError("episode must be >= 0")
    return cfg.lr0 * cfg.anneal_factor ** (episode // cfg.anneal_every)


def _draw_base_rows(pool_idx: np.ndarray, labels: np.ndarray, n: int, cfg: TrainConfig, rng):
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if cfg.class_uniform_base:
        classes = np.unique(labels[pool_idx])
        picks = rng.choice(classes, size=n)
        return np.array([rng.choice(pool_idx[labels[pool_idx] == c]) for c in picks])
    return rng.choice(pool_idx, size=n, replace=n > len(pool_idx))


def sample_episode(baseset: LabeledFeatureSet, cfg: TrainConfig, rng: np.random.Generator,
                   base_protos: PrototypeTable | None = None) -> EpisodeBatch:
    """Split base classes into meta-novel and meta-base roles for one episode.

    Meta-novel prototypes come from the K_b sampled shots only; meta-base
    prototypes from all examples of the class. The batch holds every
    meta-novel shot plus ``B - N_b * K_b`` rows drawn uniformly from the
    meta-base classes the translation map retrieves.
    """
    classes = baseset.classes()
    if len(classes) <= cfg.n_way:
        raise ArgumentError(f"need more than n_way={cfg.n_way} base classes, have {len(classes)}")
    novel_cls = sorted(int(c) for c in rng.choice(classes, size=cfg.n_way, replace=False))
    meta_base = [c for c in classes if c not in set(novel_cls)]
    shot_idx = []
    for c in novel_cls:
        idx = np.flatnonzero(baseset.labels == c)
        if len(idx) < cfg.k_shot:
            raise ArgumentError(f"class {c} has {len(idx)} examples, need k_shot={cfg.k_shot}")
        shot_idx.append(rng.choice(idx, size=cfg.k_shot, replace=False))
    shot_idx = np.concatenate(shot_idx)
    novel = baseset.subset(shot_idx)
    novel = LabeledFeatureSet(novel.features, novel.labels, np.full(len(novel), "novel"))
    if base_protos is None:
        base_protos = compute_prototypes(baseset, meta_base)
    protos = PrototypeTable({**{c: base_protos[c] for c in meta_base},
                             **compute_prototypes(novel).protos})
    tmap = build_map(protos, novel_cls, meta_base, cfg.nbs, cfg.nbs_k)
    retrieved = tmap.retrieved()
    pool = np.flatnonzero(np.isin(baseset.labels, retrieved))
    rows = _draw_base_rows(pool, baseset.labels, cfg.batch_size - len(novel), cfg, rng)
    return EpisodeBatch(novel, baseset.subset(np.sort(rows)), tmap, protos)


def direct_batch(baseset: LabeledFeatureSet, novelset: LabeledFeatureSet, cfg: TrainConfig,
                 rng: np.random.Generator, protos: PrototypeTable | None = None,
                 tmap=None) -> EpisodeBatch:
    """A batch for training directly on a fixed low-shot novel set.

    All novel rows are included; the remaining ``B - |N|`` rows are drawn from
    the base classes the translation map retrieves.
    """
    if protos is None:
        protos = compute_prototypes(baseset).merged(compute_prototypes(novelset))
    if tmap is None:
        tmap = build_map(protos, novelset.classes(), baseset.classes(), cfg.nbs, cfg.nbs_k)
    pool = np.flatnonzero(np.isin(baseset.labels, tmap.retrieved()))
    n = max(cfg.batch_size - len(novelset), 0)
    rows = _draw_base_rows(pool, baseset.labels, n, cfg, rng)
    novel = LabeledFeatureSet(novelset.features, novelset.labels, np.full(len(novelset), "novel"))
    return EpisodeBatch(novel, baseset.subset(np.sort(rows)), tmap, protos)


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Independent stream per episode, so resumed runs replay the same draws."""
    return np.random.default_rng([seed, episode])


def init_for(baseset: LabeledFeatureSet, cfg: TrainConfig,
             novelset: LabeledFeatureSet | None = None) -> gs.ModelBundle:
    rng = np.random.default_rng([cfg.seed, 2**31 - 1])
    base_labels = baseset.classes()
    novel_slots = base_labels if novelset is None else novelset.classes()
    return gs.init_bundle(cfg.variant, baseset.dim, novel_slots, base_labels, rng,
                          hidden=cfg.hidden, noise_dim=cfg.noise_dim, n_components=cfg.n_components)


@dataclass
class TrainState:
    bundle: gs.ModelBundle
    optim: dict                   # "d" / "g" -> AdamState
    episode: int = 0              # next episode to run
    log: list = None

    def __post_init__(self):
        if self.log is None:
            self.log = []


def new_state(baseset, cfg, novelset=None) -> TrainState:
    return TrainState(init_for(baseset, cfg, novelset), {"d": de.AdamState(), "g": de.AdamState()})


def _check_finite(report: gs.LossReport, episode: int):
    for name, value in zip(LOG_HEADER[2:], report.as_row()):
        if not np.isfinite(value):
            raise NumericalError(f"episode {episode}: non-finite {name} loss ({value})")


def run_episode(state: TrainState, baseset, cfg: TrainConfig, novelset=None, cache=None):
    """One discriminator step then one generator step; appends to the log."""
    ep = state.episode
    rng = episode_rng(cfg.seed, ep)
    bundle = state.bundle
    cache = cache if cache is not None else {}
    if novelset is None:
        if "base_protos" not in cache:
            cache["base_protos"] = compute_prototypes(baseset)
        batch = sample_episode(baseset, cfg, rng, cache["base_protos"])
    else:
        if "protos" not in cache:
            cache["protos"] = compute_prototypes(baseset).merged(compute_prototypes(novelset))
            cache["tmap"] = build_map(cache["protos"], novelset.classes(), baseset.classes(),
                                      cfg.nbs, cfg.nbs_k)
        batch = direct_batch(baseset, novelset, cfg, rng, cache["protos"], cache["tmap"])
    plan = gs.plan_batch(bundle, batch)
    noise = gs.draw_batch_noise(bundle, plan, rng)
    lr = lr_schedule(cfg, ep)
    kw = dict(lam_cyc=cfg.lam_cyc, lam_cov=cfg.lam_cov, m=cfg.m, nonsaturating=cfg.nonsaturating,
              svd_method=cfg.svd_method)

    # the covariance term has no discriminator parameters, so the D step skips it
    tape = de.Tape()
    nodes = gs.objective(bundle, bundle.params, plan, batch.protos, noise, tape, with_cov=False, **kw)
    report = nodes.report()
    d_names = bundle.discriminator_names()
    grads = de.backward(tape, nodes.total_d)
    # ascent on the discriminator objective
    d_grads = {k: -grads[k] for k in d_names if k in grads}

    _check_finite(report, ep)
    de.adam_step(bundle.params, d_grads, state.optim["d"], lr)

    tape = de.Tape()
    nodes_g = gs.objective(bundle, bundle.params, plan, batch.protos, noise, tape, **kw)
    if nodes_g.cov is not None:
        # generators are untouched by the D step, so this is the pre-step value
        cov = float(nodes_g.cov.value)
        report.cov = cov
        report.total_generator += cfg.lam_cov * cov
    _check_finite(report, ep)
    grads = de.backward(tape, nodes_g.total_g)
    g_names = bundle.generator_names()
    de.adam_step(bundle.params, {k: grads[k] for k in g_names if k in grads}, state.optim["g"], lr)

    state.log.append([ep, lr] + report.as_row())
    state.episode += 1
    return report


def train(baseset: LabeledFeatureSet, cfg: TrainConfig, novelset: LabeledFeatureSet | None = None,
          state: TrainState | None = None, until: int | None = None, progress_every: int = 0):
    """Meta-train (or, with ``novelset``, train directly on a low-shot set).

    Runs episodes ``state.episode .. until`` (default ``cfg.episodes``) and
    returns the final :class:`TrainState`; ``state.bundle`` is the model and
    ``state.log`` the per-episode rows of :data:`LOG_HEADER`.
    """
    state = state or new_state(baseset, cfg, novelset)
    until = cfg.episodes if until is None else until
    cache: dict = {}
    while state.episode < until:
        report = run_episode(state, baseset, cfg, novelset, cache)
        if progress_every and state.episode % progress_every == 0:
            log.info("episode %d  total_g=%.4f total_d=%.4f", state.episode,
                     report.total_generator, report.total_discriminator)
    return state


def write_log(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for row in rows:
            w.writerow([int(row[0])] + [format(float(v), ".17g") for v in row[1:]])


def read_log(path) -> list:
    """Rows written by :func:`write_log`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != LOG_HEADER:
        raise ArgumentError(f"{path}: not a training log")
    return [[int(r[0])] + [float(v) for v in r[1:]] for r in rows[1:] if r]

"""Feature sets, synthetic datasets, CSV feature files and JSON checkpoints."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, IncompatibleCheckpointError, ParseError, SchemaError

CHECKPOINT_VERSION = 1


@dataclass
class LabeledFeatureSet:
    """Rows of ``features`` with integer class labels.

    ``roles`` tags each row ``"base"`` or ``"novel"``; ``synthetic`` flags rows
    produced by a generator.
    """

    features: np.ndarray
    labels: np.ndarray
    roles: np.ndarray = None
    synthetic: np.ndarray = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(0 if self.features.size == 0 else 1, -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ArgumentError(f"{n} feature rows but labels shape {self.labels.shape}")
        if self.roles is None:
            self.roles = np.full(n, "base")
        self.roles = np.asarray(self.roles, dtype="<U5")
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        self.synthetic = np.asarray(self.synthetic, dtype=bool)
        if self.roles.shape != (n,) or self.synthetic.shape != (n,):
            raise ArgumentError("roles/synthetic must have one entry per row")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def of_class(self, label: int) -> np.ndarray:
        return self.features[self.labels == label]

    def counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.labels, return_counts=True)
        return {int(k): int(v) for k, v in zip(labels, counts)}

    def subset(self, mask_or_idx) -> "LabeledFeatureSet":
        return LabeledFeatureSet(self.features[mask_or_idx], self.labels[mask_or_idx],
                                 self.roles[mask_or_idx], self.synthetic[mask_or_idx])

    def real(self) -> "LabeledFeatureSet":
        return self.subset(~self.synthetic)

    @staticmethod
    def concat(sets) -> "LabeledFeatureSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ArgumentError("nothing to concatenate")
        return LabeledFeatureSet(
            np.concatenate([s.features for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.roles for s in sets]),
            np.concatenate([s.synthetic for s in sets]),
        )


# -- spiral ---------------------------------------------------------------

# arm offsets in degrees; top/bottom are base, left/right novel
SPIRAL_ARMS = {"top": 90.0, "bottom": 270.0, "left": 180.0, "right": 0.0}
SPIRAL_LABELS = {"top": 0, "bottom": 1, "left": 2, "right": 3}


@dataclass
class SpiralConfig:
    n_base: int = 400          # points per base arm
    n_novel: int = 400         # held-out pool per novel arm, seeds included
    k: int = 4                 # seeds per novel arm
    t_start: float = 0.5       # angular extent of every arm, radians
    t_end: float = 3.0
    r0: float = 0.1            # r(t) = r0 + r_slope * t
    r_slope: float = 0.3
    noise: float = 0.04        # radial noise std
    seed: int = 0

    def __post_init__(self):
        if min(self.n_base, self.n_novel, self.k) < 1:
            raise ArgumentError("spiral counts must be positive")
        if self.k > self.n_novel:
            raise ArgumentError("k seeds cannot exceed the novel pool size")


def spiral_arm(t, offset_deg: float, cfg: SpiralConfig, radial_noise=0.0) -> np.ndarray:
    r = cfg.r0 + cfg.r_slope * np.asarray(t) + radial_noise
    phi = np.asarray(t) + np.deg2rad(offset_deg)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)


def gen_spiral(cfg: SpiralConfig):
    """Four spiral arms at 90 degree offsets.

    Returns ``(baseset, novel_seeds, novel_heldout)``; the K seeds of each
    novel arm are chosen at random from its pool.
    """
    rng = np.random.default_rng(cfg.seed)
    parts = {}
    for arm, offset in SPIRAL_ARMS.items():
        n = cfg.n_base if arm in ("top", "bottom") else cfg.n_novel
        t = rng.uniform(cfg.t_start, cfg.t_end, size=n)
        noise = cfg.noise * rng.standard_normal(n)
        parts[arm] = spiral_arm(t, offset, cfg, noise)
    base = LabeledFeatureSet(
        np.concatenate([parts["top"], parts["bottom"]]),
        np.repeat([SPIRAL_LABELS["top"], SPIRAL_LABELS["bottom"]], cfg.n_base),
        np.full(2 * cfg.n_base, "base"))
    seeds, held = [], []
    for arm in ("left", "right"):
        pts = parts[arm]
        pick = np.zeros(len(pts), dtype=bool)
        pick[rng.choice(len(pts), size=cfg.k, replace=False)] = True
        label = SPIRAL_LABELS[arm]
        seeds.append(LabeledFeatureSet(pts[pick], np.full(cfg.k, label), np.full(cfg.k, "novel")))
        rest = int((~pick).sum())
        held.append(LabeledFeatureSet(pts[~pick], np.full(rest, label), np.full(rest, "novel")))
    return base, LabeledFeatureSet.concat(seeds), LabeledFeatureSet.concat(held)


# -- Gaussian clusters ----------------------------------------------------

@dataclass
class ClusterConfig:
    dim: int = 16
    n_base: int = 20
    n_novel: int = 5
    per_base: int = 200        # training examples per base class
    per_base_heldout: int = 50
    per_novel: int = 200       # pool per novel class (shots + held-out)
    k: int = 1                 # seeds per novel class
    mean_spread: float = 1.0   # std of base means around the origin
    cov_scale: float = 0.5     # typical per-class standard deviation
    anisotropy: float = 3.0    # ratio between largest and smallest std
    parents: tuple = (2, 3)    # min/max base parents of each novel class
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ArgumentError("cluster dimension must be at least 2")
        if min(self.n_base, self.n_novel) < 1:
            raise ArgumentError("need at least one base and one novel class")
        self.parents = tuple(int(p) for p in self.parents)
        lo, hi = self.parents
        if not 1 <= lo <= hi <= self.n_base:
            raise ArgumentError(f"parent range {self.parents} invalid for {self.n_base} base classes")


@dataclass
class ClusterTruth:
    base_means: np.ndarray
    base_covs: np.ndarray
    novel_means: np.ndarray
    novel_covs: np.ndarray
    novel_parents: list = field(default_factory=list)   # [(parent indices, weights)]


def _random_cov(dim: int, scale: float, anisotropy: float, rng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    stds = scale * np.exp(rng.uniform(-0.5, 0.5, dim) * np.log(anisotropy))
    return (q * stds**2) @ q.T


def cluster_truth(cfg: ClusterConfig) -> ClusterTruth:
    rng = np.random.default_rng([cfg.seed, 0])
    means = cfg.mean_spread * rng.standard_normal((cfg.n_base, cfg.dim))
    covs = np.stack([_random_cov(cfg.dim, cfg.cov_scale, cfg.anisotropy, rng)
                     for _ in range(cfg.n_base)])
    n_means, n_covs, parents = [], [], []
    for _ in range(cfg.n_novel):
        anchor = rng.integers(cfg.n_base)
        k = int(rng.integers(cfg.parents[0], cfg.parents[1] + 1))
        d = np.sum((means - means[anchor]) ** 2, axis=1)
        near = np.argsort(d, kind="stable")[:k]
        w = rng.dirichlet(np.ones(k)) if k > 1 else np.ones(1)
        n_means.append(w @ means[near])
        n_covs.append(np.einsum("k,kij->ij", w, covs[near]))
        parents.append((near.tolist(), w.tolist()))
    return ClusterTruth(means, covs, np.array(n_means), np.array(n_covs), parents)


def gen_clusters(cfg: ClusterConfig):
    """Gaussian base clusters and novel clusters built from related base classes.

    Each novel mean is a convex combination of 2-3 nearby base means; its
    covariance is the same combination of their covariances. Returns
    ``(baseset, novel_seeds, novel_heldout, base_heldout)``. Base labels are
    ``0..n_base-1``; novel labels follow.
    """
    truth = cluster_truth(cfg)
    rng = np.random.default_rng([cfg.seed, 1])

    def draw(mean, cov, n):
        return rng.multivariate_normal(mean, cov, size=n, method="cholesky")

    base, base_held, seeds, held = [], [], [], []
    for c in range(cfg.n_base):
        x = draw(truth.base_means[c], truth.base_covs[c], cfg.per_base + cfg.per_base_heldout)
        base.append(LabeledFeatureSet(x[:cfg.per_base], np.full(cfg.per_base, c)))
        base_held.append(LabeledFeatureSet(x[cfg.per_base:], np.full(cfg.per_base_heldout, c)))
    for j in range(cfg.n_novel):
        label = cfg.n_base + j
        x = draw(truth.novel_means[j], truth.novel_covs[j], cfg.per_novel)
        roles = np.full(cfg.per_novel, "novel")
        seeds.append(LabeledFeatureSet(x[:cfg.k], np.full(cfg.k, label), roles[:cfg.k]))
        rest = cfg.per_novel - cfg.k
        held.append(LabeledFeatureSet(x[cfg.k:], np.full(rest, label), roles[cfg.k:]))
    return (LabeledFeatureSet.concat(base), LabeledFeatureSet.concat(seeds),
            LabeledFeatureSet.concat(held), LabeledFeatureSet.concat(base_held))


# -- feature CSV ----------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_features(data: LabeledFeatureSet, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(data.dim)])
        for label, row in zip(data.labels, data.features):
            w.writerow([int(label)] + [_fmt(v) for v in row])


def load_features(path, role: str = "base") -> LabeledFeatureSet:
    """Read a ``label,f0,...`` CSV file written by :func:`save_features`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file, expected header label,f0,...")
    header = rows[0]
    if not header or header[0] != "label" or len(header) < 2:
        raise SchemaError(f"{path}: header must be label,f0,...,f{{D-1}}")
    dim = len(header) - 1
    labels, feats = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != dim + 1:
            raise SchemaError(f"{path}: line {lineno} has {len(row)} columns, expected {dim + 1}")
        try:
            labels.append(int(row[0]))
            feats.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
    if not labels:
        raise SchemaError(f"{path}: no data rows")
    return LabeledFeatureSet(np.array(feats), np.array(labels), np.full(len(labels), role))


# -- checkpoints ----------------------------------------------------------

def _array_to_json(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _array_from_json(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def _check_finite(obj, where="checkpoint"):
    for v in obj:
        if not math.isfinite(v):
            raise ParseError(f"{where}: non-finite value")


def save_checkpoint(bundle, cfg, path, optim=None, episode: int = 0) -> None:
    """Serialize a model bundle, its training config and (optionally) optimizer state.

    Floats go through ``json`` whose ``repr`` formatting round-trips float64
    exactly, so save -> load is bit-exact.
    """
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "bundle": {
            "variant": bundle.variant,
            "dim": bundle.dim,
            "noise_dim": bundle.noise_dim,
            "hidden": bundle.hidden,
            "novel_slots": [int(x) for x in bundle.novel_slots],
            "base_slots": [int(x) for x in bundle.base_slots],
            "params": {k: _array_to_json(v) for k, v in sorted(bundle.params.items())},
        },
        "config": asdict(cfg) if cfg is not None else None,
        "episode": int(episode),
    }
    if optim is not None:
        doc["optim"] = {
            key: {"step": st.step, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
                  "m": {k: _array_to_json(v) for k, v in sorted(st.m.items())},
                  "v": {k: _array_to_json(v) for k, v in sorted(st.v.items())}}
            for key, st in sorted(optim.items())
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`.

    Returns ``(bundle, cfg, optim, episode)``; ``optim`` is ``None`` if the
    checkpoint carries no optimizer state.
    """
    from .diffengine import AdamState
    from .episodic import TrainConfig
    from .ganstack import ModelBundle

    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not a valid checkpoint ({exc})") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise SchemaError(f"{path}: missing format_version")
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"{path}: format_version {doc['format_version']!r}, this build reads {CHECKPOINT_VERSION}")
    try:
        b = doc["bundle"]
        params = {k: _array_from_json(v) for k, v in b["params"].items()}
        bundle = ModelBundle(variant=b["variant"], dim=b["dim"], noise_dim=b["noise_dim"],
                             hidden=b["hidden"], novel_slots=list(b["novel_slots"]),
                             base_slots=list(b["base_slots"]), params=params)
        cfg = TrainConfig.from_dict(doc["config"]) if doc.get("config") else None
        optim = None
        if "optim" in doc:
            optim = {}
            for key, st in doc["optim"].items():
                optim[key] = AdamState(beta1=st["beta1"], beta2=st["beta2"], eps=st["eps"],
                                       step=st["step"],
                                       m={k: _array_from_json(v) for k, v in st["m"].items()},
                                       v={k: _array_from_json(v) for k, v in st["v"].items()})
        episode = int(doc.get("episode", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed checkpoint ({exc!r})") from None
    for v in params.values():
        _check_finite(v.ravel(), str(path))
    return bundle, cfg, optim, episode

"""Augment novel classes with a trained generator and score the result."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from . import diffengine as de
from . import ganstack as gs
from .datakit import LabeledFeatureSet
from .errors import ArgumentError
from .protospace import PrototypeTable, TranslationMap, build_map, compute_prototypes


@dataclass
class AugmentPlan:
    targets: dict          # novel label -> target example count
    real_counts: dict      # novel label -> real examples available
    sources: dict          # novel label -> tuple of (base label, weight)

    def n_synthetic(self, label) -> int:
        return max(self.targets[label] - self.real_counts[label], 0)


def make_plan(baseset: LabeledFeatureSet, novelset: LabeledFeatureSet, tmap: TranslationMap,
              target: int | None = None) -> AugmentPlan:
    """Fill every novel class up to the average base-class size (or ``target``)."""
    base_counts = baseset.counts()
    if not base_counts:
        raise ArgumentError("no base classes")
    avg = int(round(np.mean(list(base_counts.values())))) if target is None else int(target)
    real = novelset.counts()
    return AugmentPlan({y: max(avg, real[y]) for y in real}, real,
                       {y: tuple(tmap[y]) for y in real})


def augment(bundle: gs.ModelBundle, plan: AugmentPlan, baseset: LabeledFeatureSet,
            novelset: LabeledFeatureSet, protos: PrototypeTable,
            rng: np.random.Generator) -> LabeledFeatureSet:
    """Real novel rows plus generated rows, flagged ``synthetic``.

    Source base classes are drawn with probability proportional to their
    weight, then a source example uniformly within the class.
    """
    out = [novelset]
    for y in sorted(plan.targets):
        n = plan.n_synthetic(y)
        if n == 0:
            continue
        sources = plan.sources.get(y)
        if not sources:
            raise ArgumentError(f"novel class {y} has no source base classes")
        labels = np.array([b for b, _ in sources])
        w = np.array([a for _, a in sources], dtype=np.float64)
        src = rng.choice(labels, size=n, p=w / w.sum())
        rows = np.empty(n, dtype=np.int64)
        for b in np.unique(src):
            pool = np.flatnonzero(baseset.labels == b)
            if len(pool) == 0:
                raise ArgumentError(f"source class {b} has no base examples")
            sel = src == b
            rows[sel] = rng.choice(pool, size=int(sel.sum()))
        x = gs.generate_novel_batch(bundle, baseset.features[rows], src, np.full(n, y), protos)
        out.append(LabeledFeatureSet(x, np.full(n, y), np.full(n, "novel"), np.ones(n, dtype=bool)))
    return LabeledFeatureSet.concat(out)


# -- classifiers ----------------------------------------------------------

def nearest_centroid_rank(protos: PrototypeTable, x, candidates) -> np.ndarray:
    """Candidate labels per row, by increasing Euclidean distance; ties by label."""
    if len(candidates) == 0:
        raise ArgumentError("no candidate labels")
    cands = np.array(sorted(candidates))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    centers = protos.matrix(cands)
    d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d, axis=1, kind="stable")
    return cands[order]


def nearest_centroid_classify(protos: PrototypeTable, x, candidates) -> list:
    return nearest_centroid_rank(protos, x, candidates)[0].tolist()


@dataclass
class LinearModel:
    labels: np.ndarray
    weight: np.ndarray     # (D, C)
    bias: np.ndarray       # (C,)

    def scores(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.weight + self.bias

    def rank(self, x) -> np.ndarray:
        order = np.argsort(-self.scores(x), axis=1, kind="stable")
        return self.labels[order]


def linear_classify_train(data: LabeledFeatureSet, epochs: int = 200, lr: float = 0.05,
                          rng: np.random.Generator | None = None) -> LinearModel:
    """Softmax regression fit by full-batch Adam on cross-entropy."""
    labels = np.array(data.classes())
    if len(labels) < 2:
        raise ArgumentError("linear classifier needs at least two classes")
    rng = rng or np.random.default_rng(0)
    idx = np.searchsorted(labels, data.labels)
    x = data.features
    n, dim = x.shape
    params = {"w": 0.01 * rng.standard_normal((dim, len(labels))), "b": np.zeros(len(labels))}
    onehot = np.eye(len(labels))[idx]
    state = de.AdamState()
    for _ in range(epochs):
        z = x @ params["w"] + params["b"]
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        de.adam_step(params, {"w": x.T @ g, "b": g.sum(axis=0)}, state, lr)
    return LinearModel(labels, params["w"], params["b"])


def topk_accuracy(ranked, true_labels, k: int) -> float:
    """Fraction of rows whose true label is among the first ``k`` ranked labels."""
    if k < 1:
        raise ArgumentError("k must be >= 1")
    ranked = np.asarray(ranked)
    true_labels = np.asarray(true_labels)
    if len(true_labels) == 0:
        return 0.0
    hits = (ranked[:, :k] == true_labels[:, None]).any(axis=1)
    return float(hits.mean())


def diversity(groups) -> tuple[dict, float]:
    """Mean pairwise Euclidean distance within each class, and its mean over classes.

    ``groups`` is a feature set or a mapping label -> rows. Classes with fewer
    than two rows are skipped with a warning.
    """
    if isinstance(groups, LabeledFeatureSet):
        groups = {y: groups.of_class(y) for y in groups.classes()}
    per = {}
    for y, rows in groups.items():
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[0] < 2:
            warnings.warn(f"class {y}: fewer than 2 examples, left out of diversity")
            continue
        per[y] = float(pdist(rows).mean())
    mean = float(np.mean(list(per.values()))) if per else float("nan")
    return per, mean


# -- evaluation -----------------------------------------------------------

@dataclass
class EvalConfig:
    classifier: str = "centroid"     # centroid | linear
    epochs: int = 300
    lr: float = 0.05
    nbs: str = "soft"
    nbs_k: int = 10
    augment: bool = True
    target: int | None = None        # override the average base capacity
    seed: int = 0

    def __post_init__(self):
        if self.classifier not in ("centroid", "linear"):
            raise ArgumentError(f"unknown classifier {self.classifier!r}")


@dataclass
class EvalReport:
    setting: str
    K: int
    top_k: int
    accuracies: list
    mean: float
    std: float
    trials: int
    diversity: dict = field(default_factory=dict)
    diversity_mean: float = float("nan")
    base_novel_ratio: float | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d["diversity"] = {str(k): v for k, v in self.diversity.items()}
        return json.dumps(d, indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n")


def fit_and_score(train_set: LabeledFeatureSet, test_set: LabeledFeatureSet, candidates,
                  top_k: int, ecfg: EvalConfig, rng) -> float:
    if ecfg.classifier == "centroid" or len(candidates) < 2:
        protos = compute_prototypes(train_set, candidates)
        ranked = nearest_centroid_rank(protos, test_set.features, candidates)
    else:
        model = linear_classify_train(train_set, ecfg.epochs, ecfg.lr, rng)
        ranked = model.rank(test_set.features)
    return topk_accuracy(ranked, test_set.labels, top_k)


def augment_shots(bundle, baseset, shots, ecfg: EvalConfig, rng, base_protos=None):
    """Augmented novel set for the given low-shot examples (or the shots alone)."""
    if not ecfg.augment or bundle is None:
        return shots
    base_protos = base_protos or compute_prototypes(baseset)
    protos = base_protos.merged(compute_prototypes(shots))
    tmap = build_map(protos, shots.classes(), baseset.classes(), ecfg.nbs, ecfg.nbs_k)
    plan = make_plan(baseset, shots, tmap, ecfg.target)
    return augment(bundle, plan, baseset, shots, protos, rng)


def evaluate_trial(setting: str, bundle, baseset, shots, novel_test, ecfg: EvalConfig, rng,
                   top_k: int = 1, base_test=None, base_protos=None):
    """Augment ``shots``, fit the final classifier and score the test rows.

    Returns ``(accuracy, augmented_novel_set)``.
    """
    if setting not in ("lsl", "glsl"):
        raise ArgumentError(f"setting must be lsl or glsl, got {setting!r}")
    aug = augment_shots(bundle, baseset, shots, ecfg, rng, base_protos)
    novel_labels = shots.classes()
    if setting == "lsl":
        return fit_and_score(aug, novel_test, novel_labels, top_k, ecfg, rng), aug
    if base_test is None or len(base_test) == 0:
        raise ArgumentError("glsl needs held-out base examples")
    train_set = LabeledFeatureSet.concat([baseset, aug])
    test_set = LabeledFeatureSet.concat([novel_test, base_test])
    cands = sorted(set(novel_labels) | set(baseset.classes()))
    return fit_and_score(train_set, test_set, cands, top_k, ecfg, rng), aug


def split_shots(pool: LabeledFeatureSet, K: int, rng):
    """K random shots per class and the remaining rows as test data."""
    pick = np.zeros(len(pool), dtype=bool)
    for y in pool.classes():
        idx = np.flatnonzero(pool.labels == y)
        if len(idx) <= K:
            raise ArgumentError(f"class {y}: {len(idx)} examples leaves nothing held out at K={K}")
        pick[rng.choice(idx, size=K, replace=False)] = True
    return pool.subset(pick), pool.subset(~pick)


def evaluate(setting: str, bundle, baseset, novel_pool, K: int, trials: int = 5, top_k: int = 1,
             ecfg: EvalConfig | None = None, base_test=None) -> EvalReport:
    """Repeat: sample K shots per novel class, augment, classify, score."""
    ecfg = ecfg or EvalConfig()
    if trials < 1:
        raise ArgumentError("trials must be >= 1")
    base_protos = compute_prototypes(baseset)
    accs, divs = [], {}
    for t in range(trials):
        rng = np.random.default_rng([ecfg.seed, t])
        shots, test = split_shots(novel_pool, K, rng)
        acc, aug = evaluate_trial(setting, bundle, baseset, shots, test, ecfg, rng, top_k,
                                  base_test, base_protos)
        accs.append(acc)
        syn = aug.subset(aug.synthetic)
        if len(syn):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                per, _ = diversity(syn)
            for y, v in per.items():
                divs.setdefault(y, []).append(v)
    div = {int(y): float(np.mean(v)) for y, v in sorted(divs.items())}
    ratio = None
    if setting == "glsl":
        n_novel = len(novel_pool.classes()) * (ecfg.target or int(round(np.mean(list(baseset.counts().values())))))
        ratio = len(baseset) / max(n_novel, 1)
    return EvalReport(setting, K, top_k, [float(a) for a in accs], float(np.mean(accs)),
                      float(np.std(accs)), trials, div,
                      float(np.mean(list(div.values()))) if div else float("nan"), ratio)

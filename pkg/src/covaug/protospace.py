"""Class prototypes and neighborhood batch sampling (base-class retrieval)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datakit import LabeledFeatureSet
from .errors import ArgumentError


@dataclass(frozen=True)
class PrototypeTable:
    protos: dict            # label -> (D,) array
    pseudo: dict = field(default_factory=dict)

    def __getitem__(self, label):
        try:
            return self.protos[label]
        except KeyError:
            raise ArgumentError(f"no prototype for class {label}") from None

    def __contains__(self, label):
        return label in self.protos

    def labels(self) -> list:
        return sorted(self.protos)

    def matrix(self, labels) -> np.ndarray:
        return np.stack([self[y] for y in labels])

    def merged(self, other: "PrototypeTable") -> "PrototypeTable":
        return PrototypeTable({**self.protos, **other.protos}, {**self.pseudo, **other.pseudo})


@dataclass(frozen=True)
class TranslationMap:
    """novel label -> tuple of (base label, weight), weights summing to 1."""

    entries: dict

    def __getitem__(self, novel):
        return self.entries[novel]

    def novel_labels(self) -> list:
        return sorted(self.entries)

    def retrieved(self) -> list:
        """Union of base classes referenced by any novel class."""
        return sorted({b for pairs in self.entries.values() for b, _ in pairs})

    def weight(self, base, novel) -> float:
        return dict(self.entries[novel]).get(base, 0.0)

    def reverse(self) -> dict:
        """base label -> list of (novel label, weight), reusing the forward weights."""
        out: dict = {}
        for novel in self.novel_labels():
            for base, w in self.entries[novel]:
                out.setdefault(base, []).append((novel, w))
        return out


def compute_prototypes(data: LabeledFeatureSet, labels=None) -> PrototypeTable:
    """Mean feature vector of each class."""
    present = data.classes()
    labels = present if labels is None else list(labels)
    protos = {}
    for y in labels:
        rows = data.of_class(y)
        if rows.shape[0] == 0:
            raise ArgumentError(f"class {y} has no examples")
        protos[y] = rows.mean(axis=0)
    return PrototypeTable(protos)


def _sq_dists(protos: PrototypeTable, novel, base_labels) -> np.ndarray:
    if novel not in protos:
        raise ArgumentError(f"no prototype for novel class {novel}")
    diff = protos.matrix(base_labels) - protos[novel]
    return np.einsum("ij,ij->i", diff, diff)


def similarity_scores(protos: PrototypeTable, novel, base_labels) -> np.ndarray:
    """Softmax over base classes of minus the squared prototype distance."""
    if len(base_labels) == 0:
        raise ArgumentError("need at least one base class")
    logits = -_sq_dists(protos, novel, base_labels)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def nbs_soft(protos: PrototypeTable, novel_labels, base_labels) -> TranslationMap:
    base_labels = list(base_labels)
    entries = {}
    for y in novel_labels:
        alpha = similarity_scores(protos, y, base_labels)
        entries[y] = tuple((b, float(a)) for b, a in zip(base_labels, alpha))
    return TranslationMap(entries)


def nbs_hard(protos: PrototypeTable, novel_labels, base_labels, k: int) -> TranslationMap:
    """k nearest base classes by prototype distance, each weighted 1/k.

    Distance ties go to the smaller class label.
    """
    base_labels = sorted(base_labels)
    if not 1 <= k <= len(base_labels):
        raise ArgumentError(f"k={k} outside [1, {len(base_labels)}]")
    entries = {}
    for y in novel_labels:
        d = _sq_dists(protos, y, base_labels)
        order = np.lexsort((np.array(base_labels), d))[:k]
        entries[y] = tuple((base_labels[i], 1.0 / k) for i in order)
    return TranslationMap(entries)


def build_map(protos: PrototypeTable, novel_labels, base_labels, nbs: str = "soft",
              k: int | None = None) -> TranslationMap:
    if nbs == "soft":
        return nbs_soft(protos, novel_labels, base_labels)
    if nbs == "hard":
        if k is None:
            raise ArgumentError("hard neighborhood sampling needs k")
        return nbs_hard(protos, novel_labels, base_labels, min(k, len(base_labels)))
    raise ArgumentError(f"unknown NBS mode {nbs!r}")

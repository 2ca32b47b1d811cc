import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covaug import augeval as ae
from covaug import datakit as dk
from covaug import ganstack as gs
from covaug.errors import ArgumentError
from covaug.protospace import PrototypeTable, build_map, compute_prototypes


def fset(rows, labels, role="base"):
    return dk.LabeledFeatureSet(np.asarray(rows, float), np.asarray(labels), np.full(len(labels), role))


def counts_set(counts, dim=2, seed=0, role="base", offset=0):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(n, offset + i) for i, n in enumerate(counts)])
    return fset(rng.standard_normal((len(labels), dim)) + labels[:, None], labels, role)


def toy_world(seed=0):
    """3 base classes, 2 novel classes with 2 shots, a random ccov bundle."""
    base = counts_set([30, 30, 30], dim=3, seed=seed)
    shots = counts_set([2, 2], dim=3, seed=seed + 1, role="novel", offset=10)
    bundle = gs.init_bundle("ccov", 3, [10, 11], [0, 1, 2], np.random.default_rng(seed), hidden=8,
                            noise_dim=2)
    protos = compute_prototypes(base).merged(compute_prototypes(shots))
    tmap = build_map(protos, shots.classes(), base.classes(), "soft")
    return base, shots, bundle, protos, tmap


# -- plan and augment -----------------------------------------------------------

def test_plan_targets():
    base = counts_set([100, 100])
    novel = counts_set([5], role="novel", offset=7)
    tmap = build_map(compute_prototypes(base).merged(compute_prototypes(novel)), [7], [0, 1], "soft")
    plan = ae.make_plan(base, novel, tmap)
    assert plan.targets[7] == 100 and plan.n_synthetic(7) == 95
    assert plan.sources[7] == tuple(tmap[7])
    assert ae.make_plan(counts_set([80, 120, 100]), novel, tmap).targets[7] == 100


def test_plan_at_capacity():
    base = counts_set([4, 4])
    novel = counts_set([6], role="novel", offset=7)
    tmap = build_map(compute_prototypes(base).merged(compute_prototypes(novel)), [7], [0, 1], "soft")
    plan = ae.make_plan(base, novel, tmap)
    assert plan.targets[7] == 6 and plan.n_synthetic(7) == 0


def test_zero_synthetic_passthrough():
    base, shots, bundle, protos, tmap = toy_world()
    plan = ae.make_plan(base, shots, tmap, target=2)
    out = ae.augment(bundle, plan, base, shots, protos, np.random.default_rng(0))
    assert np.array_equal(out.features, shots.features) and np.array_equal(out.labels, shots.labels)
    assert not out.synthetic.any()


def test_augment_labels_dims_and_real_rows_untouched():
    base, shots, bundle, protos, tmap = toy_world()
    before = shots.features.copy()
    out = ae.augment(bundle, ae.make_plan(base, shots, tmap), base, shots, protos, np.random.default_rng(0))
    syn = out.subset(out.synthetic)
    assert out.counts() == {10: 30, 11: 30}
    assert set(syn.labels) == {10, 11} and syn.dim == 3 and np.all(syn.roles == "novel")
    assert np.array_equal(out.real().features, before) and np.array_equal(shots.features, before)


def test_augment_source_frequencies_follow_alpha():
    base, shots, bundle, protos, tmap = toy_world()
    seen = []
    orig = gs.generate_novel_batch

    def spy(bundle, xs, src, tgt, protos):
        seen.append(np.asarray(src))
        return orig(bundle, xs, src, tgt, protos)

    plan = ae.make_plan(base, shots.subset(shots.labels == 10), tmap, target=10_002)
    try:
        gs.generate_novel_batch = spy
        ae.augment(bundle, plan, base, shots.subset(shots.labels == 10), protos, np.random.default_rng(1))
    finally:
        gs.generate_novel_batch = orig
    src = np.concatenate(seen)
    assert len(src) == 10_000
    for b, a in tmap[10]:
        assert abs(np.mean(src == b) - a) < 0.02


def test_augment_empty_source_pool():
    base, shots, bundle, protos, tmap = toy_world()
    plan = ae.make_plan(base, shots, tmap)
    plan.sources[10] = ()
    with pytest.raises(ArgumentError):
        ae.augment(bundle, plan, base, shots, protos, np.random.default_rng(0))


def test_augment_deterministic():
    base, shots, bundle, protos, tmap = toy_world()
    plan = ae.make_plan(base, shots, tmap)
    a = ae.augment(bundle, plan, base, shots, protos, np.random.default_rng(5))
    b = ae.augment(bundle, plan, base, shots, protos, np.random.default_rng(5))
    assert a.features.tobytes() == b.features.tobytes()


# -- classifiers --------------------------------------------------------------

def test_centroid_exact_and_tie():
    p = PrototypeTable({3: np.array([0.0, 0.0]), 1: np.array([2.0, 0.0]), 5: np.array([9.0, 9.0])})
    assert ae.nearest_centroid_classify(p, [9.0, 9.0], [1, 3, 5])[0] == 5
    assert ae.nearest_centroid_classify(p, [1.0, 0.0], [3, 1]) == [1, 3]
    with pytest.raises(ArgumentError):
        ae.nearest_centroid_classify(p, [0.0, 0.0], [])


def test_centroid_brute_force():
    rng = np.random.default_rng(0)
    p = PrototypeTable({k: rng.standard_normal(4) for k in range(7)})
    for x in rng.standard_normal((50, 4)):
        d = [(sum((xi - ci) ** 2 for xi, ci in zip(x, p[k])), k) for k in range(7)]
        assert ae.nearest_centroid_classify(p, x, list(range(7))) == [k for _, k in sorted(d)]


def separable(seed=0, n=40):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    x[:, 0] += np.where(np.arange(n) < n // 2, -3, 3)
    return fset(x, (np.arange(n) >= n // 2).astype(int))


def test_linear_separable():
    data = separable()
    model = ae.linear_classify_train(data, epochs=200, rng=np.random.default_rng(0))
    assert ae.topk_accuracy(model.rank(data.features), data.labels, 1) == 1.0


def test_linear_zero_epochs_near_chance():
    data = separable(n=400)
    model = ae.linear_classify_train(data, epochs=0, rng=np.random.default_rng(1))
    p = np.exp(model.scores(data.features))
    p /= p.sum(axis=1, keepdims=True)
    assert np.abs(p - 0.5).max() < 0.1


def test_linear_deterministic_and_errors():
    data = separable()
    a = ae.linear_classify_train(data, 20, rng=np.random.default_rng(3))
    b = ae.linear_classify_train(data, 20, rng=np.random.default_rng(3))
    assert np.array_equal(a.weight, b.weight)
    with pytest.raises(ArgumentError):
        ae.linear_classify_train(data.subset(data.labels == 0), 5)


def test_topk_examples():
    ranked = np.array([[1, 2, 3], [3, 1, 2]])
    assert ae.topk_accuracy(ranked, [1, 3], 1) == 1.0
    assert ae.topk_accuracy(ranked, [2, 2], 3) == 1.0
    assert ae.topk_accuracy(ranked, [2, 2], 1) == 0.0
    with pytest.raises(ArgumentError):
        ae.topk_accuracy(ranked, [1, 3], 0)


def test_topk_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ranked = np.array([rng.permutation(6) for _ in range(30)])
        true = rng.integers(0, 6, 30)
        k = int(rng.integers(1, 7))
        hits = 0
        for row, t in zip(ranked, true):
            for j in range(k):
                if row[j] == t:
                    hits += 1
        assert ae.topk_accuracy(ranked, true, k) == hits / 30


# -- diversity ------------------------------------------------------------------

def test_diversity_examples():
    per, mean = ae.diversity({0: [[0.0, 0.0], [2.0, 0.0]], 1: np.ones((4, 3))})
    assert per == {0: 2.0, 1: 0.0} and mean == 1.0


def test_diversity_brute_force_and_warning():
    rng = np.random.default_rng(1)
    rows = rng.standard_normal((9, 3))
    pairs = [np.sqrt(np.sum((a - b) ** 2)) for a, b in itertools.combinations(rows, 2)]
    with pytest.warns(UserWarning, match="class 4"):
        per, mean = ae.diversity({2: rows, 4: rows[:1]})
    assert per == {2: pytest.approx(sum(pairs) / len(pairs), abs=1e-14)} and 4 not in per


def test_diversity_of_feature_set():
    data = fset([[0, 0], [3, 4], [1, 1], [1, 1]], [0, 0, 1, 1])
    assert ae.diversity(data) == ({0: 5.0, 1: 0.0}, 2.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
def test_diversity_invariances(seed, c, shift):
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((6, 2))
    _, d = ae.diversity({0: rows})
    assert ae.diversity({0: c * rows})[1] == pytest.approx(c * d, rel=1e-9)
    assert ae.diversity({0: rows + shift})[1] == pytest.approx(d, rel=1e-6, abs=1e-9)
    assert ae.diversity({0: rows[rng.permutation(6)]})[1] == pytest.approx(d, rel=1e-12)


# -- evaluation ---------------------------------------------------------------

def test_split_shots():
    pool = counts_set([5, 6], role="novel", offset=10)
    shots, test = ae.split_shots(pool, 2, np.random.default_rng(0))
    assert shots.counts() == {10: 2, 11: 2} and test.counts() == {10: 3, 11: 4}
    with pytest.raises(ArgumentError):
        ae.split_shots(pool, 5, np.random.default_rng(0))


def test_single_novel_class_is_trivially_right():
    base, shots, bundle, _, _ = toy_world()
    pool = counts_set([8], dim=3, role="novel", offset=10)
    rep = ae.evaluate("lsl", bundle, base, pool, 2, trials=2)
    assert rep.accuracies == [1.0, 1.0]


def test_evaluate_aggregates_trials():
    base, _, bundle, _, _ = toy_world()
    pool = counts_set([10, 10], dim=3, seed=4, role="novel", offset=10)
    rep = ae.evaluate("lsl", bundle, base, pool, 2, trials=5)
    assert rep.trials == 5 and len(rep.accuracies) == 5
    assert rep.mean == pytest.approx(np.mean(rep.accuracies)) and rep.std == pytest.approx(np.std(rep.accuracies))
    assert all(0 <= a <= 1 for a in rep.accuracies)
    assert set(rep.diversity) == {10, 11}
    again = ae.evaluate("lsl", bundle, base, pool, 2, trials=5)
    assert again.to_json() == rep.to_json()


def test_glsl_reduces_to_lsl_without_base():
    _, _, bundle, _, _ = toy_world()
    pool = counts_set([10, 10], dim=3, seed=4, role="novel", offset=10)
    empty = counts_set([0])
    rng_l, rng_g = np.random.default_rng(0), np.random.default_rng(0)
    shots, test = ae.split_shots(pool, 2, np.random.default_rng(2))
    ecfg = ae.EvalConfig(augment=False)
    lsl, _ = ae.evaluate_trial("lsl", None, empty, shots, test, ecfg, rng_l)
    # GLSL with base classes removed from training pool, candidates and test pool
    train = dk.LabeledFeatureSet.concat([empty, shots])
    glsl = ae.fit_and_score(train, test, sorted(set(train.classes())), 1, ecfg, rng_g)
    assert glsl == lsl


def test_glsl_uses_base_classes():
    base, _, bundle, _, _ = toy_world()
    pool = counts_set([10, 10], dim=3, seed=4, role="novel", offset=10)
    base_test = counts_set([5, 5, 5], dim=3, seed=9)
    rep = ae.evaluate("glsl", None, base, pool, 2, trials=2, ecfg=ae.EvalConfig(augment=False),
                      base_test=base_test)
    assert rep.base_novel_ratio == pytest.approx(90 / 60)
    with pytest.raises(ArgumentError):
        ae.evaluate("glsl", None, base, pool, 2, trials=1)


def test_excluding_synthetic_recovers_baseline():
    base, _, bundle, _, _ = toy_world()
    pool = counts_set([10, 10], dim=3, seed=4, role="novel", offset=10)
    shots, test = ae.split_shots(pool, 2, np.random.default_rng(2))
    _, aug = ae.evaluate_trial("lsl", bundle, base, shots, test, ae.EvalConfig(), np.random.default_rng(0))
    real = aug.real()
    assert real.features.tobytes() == shots.features.tobytes()
    plain, _ = ae.evaluate_trial("lsl", None, base, shots, test, ae.EvalConfig(augment=False),
                                 np.random.default_rng(0))
    again = ae.fit_and_score(real, test, shots.classes(), 1, ae.EvalConfig(), np.random.default_rng(0))
    assert plain == again


def test_evaluate_errors():
    base, _, bundle, _, _ = toy_world()
    pool = counts_set([2, 2], dim=3, role="novel", offset=10)
    with pytest.raises(ArgumentError):
        ae.evaluate("lsl", bundle, base, pool, 2)
    with pytest.raises(ArgumentError):
        ae.evaluate("all", bundle, base, counts_set([5, 5], dim=3, role="novel", offset=10), 1)
    with pytest.raises(ArgumentError):
        ae.EvalConfig(classifier="svm")


def test_report_round_trip(tmp_path):
    import json
    rep = ae.EvalReport("lsl", 1, 1, [0.5, 1.0], 0.75, 0.25, 2, {10: 0.3}, 0.3)
    rep.save(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["accuracies"] == [0.5, 1.0] and doc["diversity"] == {"10": 0.3}

import numpy as np
import pytest

from app.core.classifier import SoftmaxClassifier, cross_entropy, train_classifier
from app.core.evaluation import (
    bayes_optimal,
    classify_and_score,
    evaluate_gzsl,
    harmonic_mean,
    per_class_accuracy,
    shift_metrics,
)
from app.core.flow import FlowModel
from app.core.selftest import random_flow
from app.core.semantics import AttributeTable, SemanticEmbedder
from app.core.synthesis import SyntheticFeatures, synthesize
from app.core.tensor import Tensor, no_grad
from app.errors import ContractError, UnsupportedOperationError
from app.models import ClassifierConfig, EvalReport, FlowConfig, SemanticConfig, SynthesisConfig
from app.utils.benchmark import StandardizedTruth, standardize_truth


class _FixedClassifier:
    """Predicts whatever label is stored in the first feature column."""

    def predict(self, features):
        return features[:, 0].astype(np.int64)


def _table(n_seen=2, n_unseen=3, a=3, seed=0):
    rng = np.random.default_rng(seed)
    n = n_seen + n_unseen
    return AttributeTable(
        class_ids=tuple(range(n)),
        attributes=rng.uniform(size=(n, a)),
        seen_mask=np.array([i < n_seen for i in range(n)]),
    )


# --- metric arithmetic ------------------------------------------------

def test_harmonic_mean_examples():
    assert harmonic_mean(0.6, 0.3) == pytest.approx(0.4, abs=1e-12)
    assert harmonic_mean(0.5, 0.5) == pytest.approx(0.5, abs=1e-12)
    assert harmonic_mean(0.0, 0.0) == 0.0


def test_harmonic_mean_grid_and_bounds():
    grid = np.linspace(0.01, 1.0, 10)
    for s in grid:
        for u in grid:
            h = harmonic_mean(s, u)
            assert abs(h - 2 * s * u / (s + u)) <= 1e-12
            assert min(s, u) - 1e-12 <= h <= 2 * min(s, u) + 1e-12
            assert h <= (s + u) / 2 + 1e-12


def test_per_class_accuracy_ignores_class_imbalance():
    y_true = np.array([0] * 10 + [1] * 1000)
    y_pred = np.array([0] * 10 + [0] * 1000)
    acc, warnings = per_class_accuracy(y_true, y_pred, [0, 1])
    assert acc == pytest.approx(0.5)
    assert warnings == []


def test_empty_test_class_is_excluded_with_warning():
    acc, warnings = per_class_accuracy(np.array([0, 0]), np.array([0, 0]), [0, 1])
    assert acc == 1.0
    assert len(warnings) == 1 and "class 1" in warnings[0]


def test_evaluate_gzsl_over_joint_label_space():
    seen = (np.array([[0.0], [0.0], [1.0], [0.0]]), np.array([0, 0, 1, 1]))
    unseen = (np.array([[2.0], [0.0]]), np.array([2, 2]))
    result = evaluate_gzsl(_FixedClassifier(), seen, unseen, [0, 1], [2])
    assert result.seen_acc == pytest.approx(0.75)
    assert result.unseen_acc == pytest.approx(0.5)
    assert result.harmonic_mean == pytest.approx(2 * 0.75 * 0.5 / 1.25)


def test_report_rejects_out_of_range_accuracy():
    with pytest.raises(ValueError):
        EvalReport(czsl_acc=1.2, seen_acc=0.5, unseen_acc=0.5, harmonic_mean=0.5)


def test_report_text_lists_metrics_and_warnings():
    report = EvalReport(czsl_acc=0.5, seen_acc=0.6, unseen_acc=0.3, harmonic_mean=0.4, warnings=["w1"])
    lines = report.to_text().splitlines()
    assert "harmonic_mean=0.4" in lines
    assert "semantic_consistency=" in lines
    assert lines[-1] == "warning=w1"


# --- classifier -------------------------------------------------------

def test_untrained_classifier_has_uniform_softmax(rng):
    clf = SoftmaxClassifier(4, [3, 5, 7])
    logits = clf.logits(Tensor(rng.normal(size=(6, 4)))).values
    assert np.all(logits == logits[:, :1])
    assert cross_entropy(clf.logits(Tensor(np.zeros((2, 4)))), np.array([0, 2])).item() == pytest.approx(np.log(3))


def test_separable_classes_are_learned(rng):
    x = np.vstack([rng.normal([-2.0, 0.0], 0.3, (50, 2)), rng.normal([2.0, 0.0], 0.3, (50, 2))])
    y = np.repeat([4, 9], 50)
    clf = train_classifier(x, y, [4, 9], ClassifierConfig(epochs=200, batch_size=32, learning_rate=1e-2))
    assert np.mean(clf.predict(x) == y) == 1.0


def test_single_class_classifier_always_predicts_it(rng):
    x = rng.normal(size=(10, 3))
    clf = train_classifier(x, np.full(10, 6), [6], ClassifierConfig(epochs=5))
    assert np.all(clf.predict(rng.normal(size=(7, 3))) == 6)


def test_classifier_input_errors():
    with pytest.raises(ContractError):
        train_classifier(np.zeros((0, 2)), np.zeros(0), [0], ClassifierConfig())
    with pytest.raises(ContractError):
        train_classifier(np.zeros((2, 2)), np.array([0, 5]), [0, 1], ClassifierConfig())


def test_classifier_is_deterministic_under_seed(rng):
    x = rng.normal(size=(40, 3))
    y = rng.integers(0, 3, 40)
    cfg = ClassifierConfig(epochs=5, batch_size=8, seed=2)
    a = train_classifier(x, y, [0, 1, 2], cfg)
    b = train_classifier(x, y, [0, 1, 2], cfg)
    assert np.array_equal(a.weight.values, b.weight.values)


# --- synthesis --------------------------------------------------------

def test_synthesis_bookkeeping():
    table = _table()
    embedder = SemanticEmbedder.build(table, SemanticConfig(anchors=2))
    flow = FlowModel.build(4, embedder.cond_dim, FlowConfig(blocks=2, hidden_width=8))
    out = synthesize(flow, embedder, table, SynthesisConfig(per_class_count=2))
    assert out.features.shape == (6, 4)
    assert out.labels.tolist() == [2, 2, 3, 3, 4, 4]
    assert out.flow_untrained


def test_synthesis_needs_unseen_classes():
    table = _table(n_unseen=0)
    embedder = SemanticEmbedder.build(table, SemanticConfig(anchors=2))
    flow = FlowModel.build(4, embedder.cond_dim, FlowConfig(blocks=1, hidden_width=4))
    with pytest.raises(ContractError):
        synthesize(flow, embedder, table, SynthesisConfig())


def test_low_temperature_collapses_to_decoded_origin(rng):
    table = _table()
    embedder = SemanticEmbedder.build(table, SemanticConfig(anchors=2))
    flow = random_flow(rng, 4, 3, cond_dim=embedder.cond_dim, scale=0.3)
    out = synthesize(flow, embedder, table, SynthesisConfig(per_class_count=5, latent_temperature=1e-12))
    assert not out.flow_untrained
    for c in table.unseen_ids:
        rows = out.features[out.labels == c]
        cond = embedder.embed(Tensor(table.attributes_for([c])))
        with no_grad():
            origin = flow.inverse(Tensor(np.zeros((1, 4))), cond).values
        assert np.abs(rows - origin).max() <= 1e-8


def test_synthesis_is_reproducible_and_seed_dependent(rng):
    table = _table()
    embedder = SemanticEmbedder.build(table, SemanticConfig(anchors=2))
    flow = random_flow(rng, 4, 2, cond_dim=embedder.cond_dim)
    a = synthesize(flow, embedder, table, SynthesisConfig(per_class_count=3, seed=1)).features
    b = synthesize(flow, embedder, table, SynthesisConfig(per_class_count=3, seed=1)).features
    c = synthesize(flow, embedder, table, SynthesisConfig(per_class_count=3, seed=2)).features
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_encoded_synthetic_features_match_latent_prior(rng):
    table = _table(n_unseen=1)
    embedder = SemanticEmbedder.build(table, SemanticConfig(anchors=2))
    flow = random_flow(rng, 3, 3, cond_dim=embedder.cond_dim, scale=0.2)
    cfg = SynthesisConfig(per_class_count=10_000, latent_temperature=0.5)
    out = synthesize(flow, embedder, table, cfg)
    cond = embedder.embed(Tensor(np.repeat(table.attributes_for(table.unseen_ids), len(out.labels), axis=0)))
    with no_grad():
        z = flow.forward(Tensor(out.features), cond).z.values
    assert np.all(np.abs(z.mean(axis=0)) <= 0.05 * 0.5)
    np.testing.assert_allclose(z.var(axis=0), 0.25, rtol=0.05)


# --- shift diagnostics ------------------------------------------------

def _oracle_samples(truth: StandardizedTruth, class_ids, per_class, rng, collapse=False):
    rows = truth.rows_for(class_ids)
    blocks = []
    for r in rows:
        noise = np.zeros((per_class, truth.means.shape[1])) if collapse else rng.standard_normal((per_class, truth.means.shape[1]))
        blocks.append(truth.means[r] + np.sqrt(truth.variances[r]) * noise)
    return SyntheticFeatures(features=np.vstack(blocks), labels=np.repeat(np.array(class_ids), per_class))


def _benchmark_truth(small_benchmark):
    dataset, truth = small_benchmark
    return dataset, standardize_truth(truth, dataset.standardization)


def test_oracle_samples_score_as_unshifted(small_benchmark, rng):
    dataset, truth = _benchmark_truth(small_benchmark)
    ids = list(dataset.table.class_ids)
    metrics = shift_metrics(_oracle_samples(truth, ids, 500, rng), truth, dataset.table)
    assert 0.9 <= metrics.variance_ratio <= 1.1
    assert metrics.structure_spearman >= 0.95
    assert metrics.semantic_consistency >= 0.95


def test_collapsed_samples_have_zero_variance_ratio(small_benchmark, rng):
    dataset, truth = _benchmark_truth(small_benchmark)
    metrics = shift_metrics(_oracle_samples(truth, dataset.table.unseen_ids, 20, rng, collapse=True), truth, dataset.table)
    assert metrics.variance_ratio == 0.0


def test_permuted_class_means_lose_structure(small_benchmark):
    dataset, truth = _benchmark_truth(small_benchmark)
    ids = list(dataset.table.class_ids)
    rhos = []
    for seed in range(30):
        perm_rng = np.random.default_rng(seed)
        permuted = perm_rng.permutation(ids).tolist()
        samples = _oracle_samples(truth, permuted, 50, perm_rng, collapse=True)
        relabeled = SyntheticFeatures(features=samples.features, labels=np.repeat(np.array(ids), 50))
        rhos.append(shift_metrics(relabeled, truth, dataset.table).structure_spearman)
    assert abs(np.mean(rhos)) <= 0.3


def test_shift_metrics_need_ground_truth(small_benchmark, rng):
    dataset, _ = small_benchmark
    samples = SyntheticFeatures(features=rng.normal(size=(4, dataset.dim)), labels=np.array([4, 4, 5, 5]))
    with pytest.raises(UnsupportedOperationError):
        shift_metrics(samples, None, dataset.table)


def test_bayes_optimal_dominates_chance(small_benchmark):
    dataset, truth = _benchmark_truth(small_benchmark)
    result = bayes_optimal(dataset, truth)
    assert result.seen_acc > 1 / len(dataset.table.class_ids)
    assert result.unseen_acc > 1 / len(dataset.table.class_ids)


def test_classify_and_score_with_oracle_features(small_benchmark, rng):
    dataset, truth = _benchmark_truth(small_benchmark)
    synthetic = _oracle_samples(truth, dataset.table.unseen_ids, 50, rng)
    report = classify_and_score(dataset, synthetic, ClassifierConfig(epochs=30, batch_size=64))
    assert 0.0 <= report.harmonic_mean <= 1.0
    assert report.czsl_acc > 1 / len(dataset.table.unseen_ids)
    assert not report.flow_untrained

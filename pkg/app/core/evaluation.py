"""
Zero-shot metrics and generation-shift diagnostics.
"""
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import spearmanr

from app.core.classifier import SoftmaxClassifier, train_classifier
from app.core.synthesis import SyntheticFeatures
from app.errors import UnsupportedOperationError
from app.logging_config import logger
from app.models import ClassifierConfig, EvalReport, ShiftMetrics
from app.utils.benchmark import StandardizedTruth
from app.utils.data_io import Dataset


@dataclass
class GZSLResult:
    seen_acc: float
    unseen_acc: float
    harmonic_mean: float
    warnings: List[str] = field(default_factory=list)


def harmonic_mean(seen_acc: float, unseen_acc: float) -> float:
    total = seen_acc + unseen_acc
    return 2.0 * seen_acc * unseen_acc / total if total > 0 else 0.0


def per_class_accuracy(
    y_true: np.ndarray, y_pred: np.ndarray, class_ids: Sequence[int]
) -> Tuple[float, List[str]]:
    """Top-1 accuracy averaged uniformly over classes that have samples."""
    accs = []
    warnings = []
    for c in class_ids:
        mask = y_true == c
        if not np.any(mask):
            message = f"class {c} has no test samples and is excluded"
            logger.warning(message)
            warnings.append(message)
            continue
        accs.append(float(np.mean(y_pred[mask] == c)))
    return (float(np.mean(accs)) if accs else 0.0), warnings


def evaluate_gzsl(
    classifier: SoftmaxClassifier,
    test_seen: Tuple[np.ndarray, np.ndarray],
    test_unseen: Tuple[np.ndarray, np.ndarray],
    seen_ids: Sequence[int],
    unseen_ids: Sequence[int],
) -> GZSLResult:
    """Per-class S and U over the joint label space, and their harmonic mean."""
    seen_x, seen_y = test_seen
    unseen_x, unseen_y = test_unseen
    s, w_seen = per_class_accuracy(seen_y, classifier.predict(seen_x), seen_ids) if len(seen_y) else (0.0, [])
    u, w_unseen = per_class_accuracy(unseen_y, classifier.predict(unseen_x), unseen_ids) if len(unseen_y) else (0.0, [])
    return GZSLResult(seen_acc=s, unseen_acc=u, harmonic_mean=harmonic_mean(s, u), warnings=w_seen + w_unseen)


def shift_metrics(synthetic: SyntheticFeatures, truth: Optional[StandardizedTruth], table) -> ShiftMetrics:
    """
    semantic_consistency: mean cosine between synthetic class-mean deltas and
        attr_map @ (attribute deltas) over class pairs
    variance_ratio: mean over classes of synthetic / true mean per-dim variance
    structure_spearman: rank correlation of pairwise class-mean distances
    """
    if truth is None:
        raise UnsupportedOperationError("shift metrics need benchmark ground truth (synthetic benchmark only)")
    class_ids = list(dict.fromkeys(synthetic.labels.tolist()))
    syn_means = np.stack([synthetic.features[synthetic.labels == c].mean(axis=0) for c in class_ids])
    syn_vars = np.stack([synthetic.features[synthetic.labels == c].var(axis=0) for c in class_ids])
    rows = truth.rows_for(class_ids)
    true_means = truth.means[rows]
    true_vars = truth.variances[rows]
    attrs = table.attributes_for(class_ids)

    variance_ratio = float(np.mean(syn_vars.mean(axis=1) / true_vars.mean(axis=1)))

    cosines = []
    for i, j in combinations(range(len(class_ids)), 2):
        syn_delta = syn_means[i] - syn_means[j]
        true_delta = truth.attr_map @ (attrs[i] - attrs[j])
        norm = np.linalg.norm(syn_delta) * np.linalg.norm(true_delta)
        if norm > 0:
            cosines.append(float(syn_delta @ true_delta / norm))
    semantic_consistency = float(np.mean(cosines)) if cosines else None

    structure_spearman = None
    if len(class_ids) >= 3:
        rho = spearmanr(pdist(syn_means), pdist(true_means)).correlation
        structure_spearman = None if np.isnan(rho) else float(rho)

    return ShiftMetrics(
        semantic_consistency=semantic_consistency,
        variance_ratio=variance_ratio,
        structure_spearman=structure_spearman,
    )


def bayes_optimal(dataset: Dataset, truth: StandardizedTruth) -> GZSLResult:
    """Classify test rows with the true class Gaussians (equal priors)."""
    class_ids = list(dataset.table.class_ids)
    rows = truth.rows_for(class_ids)
    means, variances = truth.means[rows], truth.variances[rows]

    def predict(x: np.ndarray) -> np.ndarray:
        if len(x) == 0:
            return np.zeros(0, dtype=np.int64)
        diff = x[:, None, :] - means[None, :, :]
        loglik = -0.5 * np.sum(diff * diff / variances[None] + np.log(variances[None]), axis=2)
        return np.array(class_ids, dtype=np.int64)[loglik.argmax(axis=1)]

    seen_x, seen_y = dataset.subset(dataset.split.test_seen)
    unseen_x, unseen_y = dataset.subset(dataset.split.test_unseen)
    s, _ = per_class_accuracy(seen_y, predict(seen_x), dataset.table.seen_ids) if len(seen_y) else (0.0, [])
    u, _ = per_class_accuracy(unseen_y, predict(unseen_x), dataset.table.unseen_ids) if len(unseen_y) else (0.0, [])
    return GZSLResult(seen_acc=s, unseen_acc=u, harmonic_mean=harmonic_mean(s, u))


def classify_and_score(
    dataset: Dataset, synthetic: SyntheticFeatures, cfg: ClassifierConfig
) -> EvalReport:
    """
    GZSL: softmax over all classes trained on real seen + synthetic unseen.
    CZSL: softmax over unseen classes trained on synthetic features only.
    """
    table = dataset.table
    seen_x, seen_y = dataset.subset(dataset.split.train_seen)
    train_x = np.vstack([seen_x, synthetic.features])
    train_y = np.concatenate([seen_y, synthetic.labels])
    joint_ids = table.seen_ids + table.unseen_ids
    gzsl = train_classifier(train_x, train_y, joint_ids, cfg)
    test_seen = dataset.subset(dataset.split.test_seen)
    test_unseen = dataset.subset(dataset.split.test_unseen)
    result = evaluate_gzsl(gzsl, test_seen, test_unseen, table.seen_ids, table.unseen_ids)

    czsl = train_classifier(synthetic.features, synthetic.labels, table.unseen_ids, cfg)
    unseen_x, unseen_y = test_unseen
    czsl_acc, _ = per_class_accuracy(unseen_y, czsl.predict(unseen_x), table.unseen_ids) if len(unseen_y) else (0.0, [])

    warnings = list(result.warnings)
    if synthetic.flow_untrained:
        warnings.insert(0, "synthetic features come from an untrained (identity) flow")
    logger.info(
        f"S={result.seen_acc:.4f} U={result.unseen_acc:.4f} H={result.harmonic_mean:.4f} CZSL={czsl_acc:.4f}"
    )
    return EvalReport(
        czsl_acc=czsl_acc,
        seen_acc=result.seen_acc,
        unseen_acc=result.unseen_acc,
        harmonic_mean=result.harmonic_mean,
        flow_untrained=synthetic.flow_untrained,
        warnings=warnings,
    )

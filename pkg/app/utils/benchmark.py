"""
Synthetic GZSL benchmark with known class Gaussians.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.core.semantics import AttributeTable
from app.logging_config import logger
from app.models import BenchmarkSpec, BenchmarkTruth
from app.utils.data_io import Dataset, Split, Standardization, build_dataset


def generate_benchmark(spec: BenchmarkSpec) -> Tuple[Dataset, BenchmarkTruth]:
    """
    Attributes ~ U[0,1]^a, class mean = attr_map @ attr, diagonal class
    variances drawn from ``class_cov_scale``. Seen classes come first and
    are split train/test per class; every unseen sample goes to test_unseen.
    """
    rng = np.random.default_rng(spec.seed)
    n_classes = spec.n_seen + spec.n_unseen
    class_ids = list(range(n_classes))
    attrs = rng.uniform(0.0, 1.0, (n_classes, spec.a))
    attr_map = rng.normal(0.0, spec.map_scale / np.sqrt(spec.a), (spec.d, spec.a))
    means = attrs @ attr_map.T
    lo, hi = spec.class_cov_scale
    variances = rng.uniform(lo, hi, (n_classes, spec.d))

    spc = spec.samples_per_class
    features = np.vstack([
        means[c] + np.sqrt(variances[c]) * rng.standard_normal((spc, spec.d))
        for c in range(n_classes)
    ])
    labels = np.repeat(np.array(class_ids, dtype=np.int64), spc)

    n_train = max(1, min(spc - 1, int(round(spec.train_fraction * spc))))
    train_seen: List[int] = []
    test_seen: List[int] = []
    for c in range(spec.n_seen):
        rows = c * spc + rng.permutation(spc)
        train_seen.extend(rows[:n_train].tolist())
        test_seen.extend(rows[n_train:].tolist())
    test_unseen = list(range(spec.n_seen * spc, n_classes * spc))

    table = AttributeTable(
        class_ids=tuple(class_ids),
        attributes=attrs,
        seen_mask=np.array([c < spec.n_seen for c in class_ids]),
    )
    split = Split(
        train_seen=np.array(sorted(train_seen), dtype=np.int64),
        test_seen=np.array(sorted(test_seen), dtype=np.int64),
        test_unseen=np.array(test_unseen, dtype=np.int64),
    )
    truth = BenchmarkTruth(
        class_ids=class_ids,
        means=means.tolist(),
        variances=variances.tolist(),
        attr_map=attr_map.tolist(),
    )
    logger.info(
        f"Generated benchmark: {spec.n_seen} seen / {spec.n_unseen} unseen classes, "
        f"d={spec.d}, a={spec.a}, {spc} samples per class"
    )
    return build_dataset(features, labels, table, split), truth


@dataclass(frozen=True)
class StandardizedTruth:
    """Ground truth expressed in the dataset's standardized feature space."""
    class_ids: Tuple[int, ...]
    means: np.ndarray
    variances: np.ndarray
    attr_map: np.ndarray

    def rows_for(self, class_ids) -> np.ndarray:
        return np.array([self.class_ids.index(int(c)) for c in class_ids], dtype=np.int64)


def standardize_truth(truth: BenchmarkTruth, standardization: Standardization) -> StandardizedTruth:
    kept = standardization.kept_dims
    std = standardization.std
    means = (np.array(truth.means)[:, kept] - standardization.mean) / std
    variances = np.array(truth.variances)[:, kept] / (std * std)
    attr_map = np.array(truth.attr_map)[kept] / std[:, None]
    return StandardizedTruth(class_ids=tuple(truth.class_ids), means=means, variances=variances, attr_map=attr_map)

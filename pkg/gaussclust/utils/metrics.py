from typing import Dict, Tuple, Any
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class ContingencyTable:
    """
    Overlap counts between a predicted partition (rows) and a ground-truth partition (columns).

    Args:
        counts: (R, C) matrix; counts[i, j] = number of samples in predicted
            cluster row_labels[i] and true class col_labels[j]
        row_labels: predicted ids, sorted
        col_labels: true ids, sorted
    """
    counts: np.ndarray
    row_labels: np.ndarray
    col_labels: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClusteringReport:
    acc: float
    nmi: float
    ari: float
    mapping: Dict[int, int]
    table: ContingencyTable = field(repr=False)
    degenerate: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "acc": self.acc,
            "nmi": self.nmi,
            "ari": self.ari,
            "mapping": {str(p): t for p, t in self.mapping.items()},
            "degenerate_partition": self.degenerate,
            "contingency": {
                "rows": self.table.row_labels.tolist(),
                "cols": self.table.col_labels.tolist(),
                "counts": self.table.counts.tolist(),
            },
        }

    def format_table(self) -> str:
        lines = [f"ACC {self.acc:.4f}   NMI {self.nmi:.4f}   ARI {self.ari:.4f}"
                 + ("   (degenerate partition)" if self.degenerate else "")]
        header = "pred\\true " + " ".join(f"{c:>6d}" for c in self.table.col_labels) + "    sum"
        lines.append(header)
        for label, row in zip(self.table.row_labels, self.table.counts):
            lines.append(f"{label:>9d} " + " ".join(f"{n:>6d}" for n in row) + f" {row.sum():>6d}")
        lines.append("      sum " + " ".join(f"{n:>6d}" for n in self.table.col_sums)
                     + f" {self.table.total:>6d}")
        return "\n".join(lines)


def _check_labels(pred, truth) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if len(pred) != len(truth):
        raise ValueError(f"Length mismatch: {len(pred)} predictions vs {len(truth)} labels")
    if len(pred) == 0:
        raise ValueError("Cannot evaluate an empty labelling")
    if pred.min() < 0 or truth.min() < 0:
        raise ValueError("Cluster ids must be nonnegative")
    return pred.astype(np.int64), truth.astype(np.int64)


def contingency_table(pred, truth) -> ContingencyTable:
    pred, truth = _check_labels(pred, truth)
    row_labels, rows = np.unique(pred, return_inverse=True)
    col_labels, cols = np.unique(truth, return_inverse=True)
    counts = np.zeros((len(row_labels), len(col_labels)), dtype=np.int64)
    np.add.at(counts, (rows, cols), 1)
    return ContingencyTable(counts, row_labels, col_labels)


def accuracy_from_table(table: ContingencyTable) -> Tuple[float, Dict[int, int]]:
    """Hungarian assignment on the negated counts, padded to a square matrix"""
    n_rows, n_cols = table.counts.shape
    size = max(n_rows, n_cols)
    cost = np.zeros((size, size), dtype=np.int64)
    cost[:n_rows, :n_cols] = -table.counts
    rows, cols = linear_sum_assignment(cost)
    mapping, matched = {}, 0
    for i, j in zip(rows, cols):
        if i < n_rows and j < n_cols:
            mapping[int(table.row_labels[i])] = int(table.col_labels[j])
            matched += table.counts[i, j]
    return matched / table.total, mapping


def accuracy(pred, truth) -> Tuple[float, Dict[int, int]]:
    """
    Clustering accuracy under the optimal one-to-one mapping of predicted ids
    to true ids. Returns (acc, mapping); predicted ids left unmatched
    (when there are more clusters than classes) are absent from mapping.
    """
    return accuracy_from_table(contingency_table(pred, truth))


def _entropy_term(sizes: np.ndarray, n: int) -> float:
    sizes = sizes[sizes > 0]
    return float(np.sum(sizes * np.log(sizes / n)))


def nmi_from_table(table: ContingencyTable) -> Tuple[float, bool]:
    """NMI with a geometric-mean normalization; returns (nmi, degenerate)"""
    n = table.total
    counts = table.counts.astype(np.float64)
    outer = np.outer(table.row_sums, table.col_sums).astype(np.float64)
    nz = counts > 0
    mutual = float(np.sum(counts[nz] * np.log(n * counts[nz] / outer[nz])))
    h_rows = _entropy_term(table.row_sums, n)
    h_cols = _entropy_term(table.col_sums, n)
    if h_rows == 0. or h_cols == 0.:
        return 0., True
    value = mutual / np.sqrt(h_rows * h_cols)
    return float(np.clip(value, 0., 1.)), False


def nmi(pred, truth) -> float:
    """Normalized mutual information (natural log). A single-cluster partition gives 0."""
    return nmi_from_table(contingency_table(pred, truth))[0]


def _pairs(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return x * (x - 1.) / 2.


def ari_from_table(table: ContingencyTable) -> float:
    n = table.total
    if n < 2:
        raise ValueError("ARI needs at least two samples")
    index = np.sum(_pairs(table.counts))
    sum_rows = np.sum(_pairs(table.row_sums))
    sum_cols = np.sum(_pairs(table.col_sums))
    expected = sum_rows * sum_cols / _pairs(np.array(n))
    max_index = (sum_rows + sum_cols) / 2.
    if max_index == expected:
        # both partitions are all-in-one or all-singletons, hence identical
        return 1.
    return float((index - expected) / (max_index - expected))


def ari(pred, truth) -> float:
    """Adjusted Rand index"""
    return ari_from_table(contingency_table(pred, truth))


def report(pred, truth) -> ClusteringReport:
    table = contingency_table(pred, truth)
    acc, mapping = accuracy_from_table(table)
    nmi_value, degenerate = nmi_from_table(table)
    return ClusteringReport(
        acc=float(acc), nmi=nmi_value, ari=ari_from_table(table) if table.total >= 2 else 0.,
        mapping=mapping, table=table, degenerate=degenerate)


def dataset_ground_truth(dataset) -> np.ndarray:
    """The only sanctioned access to a dataset's class labels"""
    if not dataset.has_ground_truth:
        raise ValueError("ground truth required")
    return dataset._labels.copy()


def evaluate_dataset(pred, dataset) -> ClusteringReport:
    return report(pred, dataset_ground_truth(dataset))

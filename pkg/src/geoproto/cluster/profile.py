"""Descriptive per-cluster tables."""

import numpy as np
import pandas as pd

from geoproto.data.dataset import Dataset
from geoproto.exceptions import IngestError, SchemaMismatchError


def _labels(data: Dataset, assignment: np.ndarray) -> np.ndarray:
    labels = np.asarray(assignment, dtype=np.int64)
    if labels.shape != (data.n,):
        raise SchemaMismatchError(f"Assignment covers {labels.size} records but the dataset has {data.n}")
    return labels


def _cluster_count(labels: np.ndarray, k: int | None) -> int:
    return k if k is not None else int(labels.max()) + 1


def cluster_sizes(assignment: np.ndarray, k: int | None = None) -> pd.DataFrame:
    """Records per cluster and their share of the total."""
    labels = np.asarray(assignment, dtype=np.int64)
    k = _cluster_count(labels, k)
    sizes = np.bincount(labels, minlength=k)
    return pd.DataFrame({"cluster": np.arange(k), "size": sizes, "share": sizes / sizes.sum()})


def categorical_profile(data: Dataset, assignment: np.ndarray, k: int | None = None) -> pd.DataFrame:
    """Within-cluster level distribution of every categorical attribute."""
    labels = _labels(data, assignment)
    k = _cluster_count(labels, k)
    frames = []
    for j, attr in enumerate(data.schema.categorical):
        levels = list(attr.levels or ())
        counts = np.zeros((k, len(levels)), dtype=np.int64)
        np.add.at(counts, (labels, data.categorical[:, j]), 1)
        sizes = counts.sum(axis=1, keepdims=True)
        proportions = np.divide(counts, sizes, out=np.zeros(counts.shape), where=sizes > 0)
        frames.append(
            pd.DataFrame(
                {
                    "attribute": attr.name,
                    "cluster": np.repeat(np.arange(k), len(levels)),
                    "level": np.tile(levels, k),
                    "count": counts.ravel(),
                    "proportion": proportions.ravel(),
                }
            )
        )
    if not frames:
        return pd.DataFrame(columns=["attribute", "cluster", "level", "count", "proportion"])
    return pd.concat(frames, ignore_index=True)


def level_shares(data: Dataset, assignment: np.ndarray, column: str) -> pd.DataFrame:
    """For each level of ``column``, the share of that level's records falling in each cluster.

    ``column`` may be a categorical attribute or any ingested raw column (for
    instance a passed-through state code). Rows are sorted by share,
    descending, within each cluster.
    """
    labels = _labels(data, assignment)
    if data.raw is None or column not in data.raw.columns:
        raise IngestError(f"Column '{column}' is not available for level shares", column=column)
    frame = pd.DataFrame({"level": data.raw[column].str.strip().to_numpy(), "cluster": labels})
    counts = frame.groupby(["level", "cluster"]).size().rename("count").reset_index()
    totals = counts.groupby("level")["count"].transform("sum")
    counts["share"] = counts["count"] / totals
    return counts.sort_values(["cluster", "share", "level"], ascending=[True, False, True]).reset_index(
        drop=True
    )[["cluster", "level", "count", "share"]]


def numerical_profile(data: Dataset, assignment: np.ndarray, k: int | None = None) -> pd.DataFrame:
    """Raw-unit distribution summary of every numerical attribute per cluster."""
    labels = _labels(data, assignment)
    k = _cluster_count(labels, k)
    rows = []
    for j, attr in enumerate(data.schema.numerical):
        values = data.params[j].inverse(data.numerical[:, j])
        for cluster in range(k):
            member_values = values[labels == cluster]
            if member_values.size == 0:
                continue
            q1, median, q3 = np.quantile(member_values, [0.25, 0.5, 0.75])
            rows.append(
                {"attribute": attr.name, "cluster": cluster, "count": member_values.size,
                 "min": member_values.min(), "q1": q1, "median": median,
                 "mean": member_values.mean(), "q3": q3, "max": member_values.max()}
            )
    return pd.DataFrame(
        rows, columns=["attribute", "cluster", "count", "min", "q1", "median", "mean", "q3", "max"]
    )

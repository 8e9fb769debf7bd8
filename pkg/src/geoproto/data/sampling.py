"""Stratified subsampling of datasets."""

import logging
import math
from collections.abc import Sequence

import numpy as np

from geoproto.data.dataset import Dataset
from geoproto.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


def stratum_quota(fraction: float, size: int) -> int:
    """Records a stratum of ``size`` contributes: fraction * size rounded half up."""
    return min(size, math.floor(fraction * size + 0.5))


def stratified_sample(
    data: Dataset, fraction: float, strata: Sequence[str] = (), seed: int = 0
) -> Dataset:
    """Sample without replacement so every joint stratum keeps its share.

    Each combination of the ``strata`` categorical attributes contributes
    round(fraction * stratum size) records. Selected records keep their
    original relative order. Without strata the whole dataset is one stratum.
    """
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"Sample fraction must be in (0, 1], got {fraction}")
    columns = [data.schema.categorical_position(name) for name in strata]

    if columns:
        keys = data.categorical[:, columns]
        _, stratum_of = np.unique(keys, axis=0, return_inverse=True)
        stratum_of = stratum_of.reshape(-1)
    else:
        stratum_of = np.zeros(data.n, dtype=np.intp)

    rng = np.random.default_rng(seed)
    chosen = []
    for stratum in range(int(stratum_of.max()) + 1 if data.n else 0):
        members = np.flatnonzero(stratum_of == stratum)
        quota = stratum_quota(fraction, len(members))
        if quota:
            chosen.append(rng.choice(members, size=quota, replace=False))
    indices = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.intp)
    logger.info(
        f"Stratified sample: {len(indices)} of {data.n} records "
        f"({fraction:.2%}, {int(stratum_of.max()) + 1 if data.n else 0} strata)"
    )
    return data.take(indices)

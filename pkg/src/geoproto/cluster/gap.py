"""Gap-statistic choice of the number of clusters.

For every k the observed log W_k is compared with its expectation over B
reference datasets drawn from a null distribution (uniform over the observed
range for numericals and the lat/lon box, marginal frequencies for
categoricals). The chosen k is the smallest with Gap(k) >= Gap(k+1) - s(k+1).
"""

import logging
import math
from collections.abc import Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from geoproto.cluster.distance import WGS84, EarthModel, angle_sums
from geoproto.cluster.kproto import KProtoConfig, fit
from geoproto.cluster.lambdas import resolve_weights
from geoproto.data.dataset import Dataset
from geoproto.data.sampling import stratified_sample
from geoproto.exceptions import ConfigurationError, EmptyClusterError, GapSelectionError
from geoproto.models import ClusteringModel, GapProfile, GapRow, Weights

logger = logging.getLogger(__name__)

# Substream keys under the master seed
_SAMPLE, _OBSERVED, _REFERENCE_DATA, _REFERENCE_FIT = range(4)


class GapConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_min: int = Field(default=1, ge=1)
    k_max: int = Field(default=10, ge=1)
    B: int = Field(default=50, ge=1)
    sample_fraction: float = Field(default=0.10, gt=0, le=1)
    strata: tuple[str, ...] = ()
    kproto: KProtoConfig = Field(default_factory=lambda: KProtoConfig(k=1))
    lambda1: float | None = Field(default=None, ge=0)
    lambda2: float | None = Field(default=None, ge=0)
    seed: int = 0
    n_jobs: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_range(self) -> "GapConfig":
        if self.k_max < self.k_min:
            raise ConfigurationError(f"k_max ({self.k_max}) is below k_min ({self.k_min})")
        return self

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)

    @property
    def evaluated_k(self) -> range:
        """The selection rule at k_max needs Gap(k_max + 1)."""
        return range(self.k_min, self.k_max + 2)


def substream_seed(seed: int, *key: int) -> int:
    """Independent child seed of ``seed`` identified by ``key``."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def within_dispersion(
    data: Dataset, model: ClusteringModel, w: Weights | None = None, earth: EarthModel = WGS84
) -> float:
    """W_k: for each cluster, the sum of dissimilarities over ordered member pairs over 2 n_l.

    Pair sums use exact identities (squared deviations from the mean, level
    counts, pairwise angles between distinct coordinates) instead of an n_l^2 loop.
    """
    w = w or model.weights
    labels = np.asarray(model.assignment)
    level_counts = data.schema.level_counts()
    total = []
    for cluster in range(model.k):
        members = np.flatnonzero(labels == cluster)
        size = members.size
        if size == 0:
            raise EmptyClusterError(cluster)

        numerical = data.numerical[members]
        deviation = numerical - numerical.mean(axis=0)
        pairs = 2.0 * size * math.fsum(np.einsum("ij,ij->i", deviation, deviation))

        mismatches = 0
        for j in range(data.categorical.shape[1]):
            counts = np.bincount(data.categorical[members, j], minlength=level_counts[j])
            mismatches += size * size - int(np.dot(counts, counts))
        pairs += w.lambda1 * mismatches

        if data.spatial is not None and w.lambda2 > 0:
            points, counts = np.unique(data.spatial[members], axis=0, return_counts=True)
            weights = counts.astype(np.float64)
            angles = math.fsum(angle_sums(points, points, weights) * weights)
            pairs += w.lambda2 * earth.effective_radius_m * angles

        total.append(pairs / (2.0 * size))
    return math.fsum(total)


def sample_reference(data: Dataset, seed: int) -> Dataset:
    """Null-model dataset of the same size and schema as ``data``."""
    rng = np.random.default_rng(seed)
    n = data.n
    d1 = data.numerical.shape[1]
    numerical = np.empty((n, 0))
    if d1:
        numerical = rng.uniform(data.numerical.min(axis=0), data.numerical.max(axis=0), size=(n, d1))

    codes = []
    for j in range(data.categorical.shape[1]):
        frequencies = data.level_counts(j) / n
        codes.append(rng.choice(len(frequencies), size=n, p=frequencies))
    categorical = np.column_stack(codes) if codes else np.empty((n, 0), dtype=np.int64)

    spatial = None
    if data.spatial is not None:
        low, high = data.spatial.min(axis=0), data.spatial.max(axis=0)
        spatial = rng.uniform(low, high, size=(n, 2))

    return Dataset(
        schema=data.schema,
        params=data.params,
        record_ids=np.array([f"ref-{i}" for i in range(n)], dtype=object),
        numerical=numerical,
        categorical=categorical,
        spatial=spatial,
    )


def select_k(
    gaps: Sequence[float | None], s: Sequence[float | None], k_values: Sequence[int] | None = None
) -> int | None:
    """Smallest k with Gap(k) >= Gap(k+1) - s(k+1); None when no k qualifies.

    ``gaps`` and ``s`` are aligned with ``k_values`` (default 1, 2, ...). A k
    whose own gap or whose successor's gap is undefined cannot be chosen.
    """
    k_values = list(k_values) if k_values is not None else list(range(1, len(gaps) + 1))
    for i in range(len(gaps) - 1):
        here, following, spread = gaps[i], gaps[i + 1], s[i + 1]
        if here is None or following is None or spread is None:
            continue
        if k_values[i + 1] != k_values[i] + 1:
            continue
        if here >= following - spread:
            return k_values[i]
    return None


def _log_dispersions(
    data: Dataset, ks: Sequence[int], template: KProtoConfig, weights: Weights, seed: int, earth: EarthModel
) -> list[float | None]:
    """log W_k for each k (None where W_k = 0 or k clusters cannot all be filled)."""
    logs: list[float | None] = []
    for k in ks:
        cfg = template.model_copy(update={"k": k, "weights": weights, "seed": substream_seed(seed, k), "n_jobs": 1})
        model = fit(data, cfg, earth)
        try:
            dispersion = within_dispersion(data, model, weights, earth)
        except EmptyClusterError as e:
            logger.debug(f"k={k}: {e}")
            dispersion = 0.0
        logs.append(math.log(dispersion) if dispersion > 0 else None)
    return logs


def _reference_log_dispersions(
    sample: Dataset, b: int, cfg: GapConfig, weights: Weights, earth: EarthModel
) -> list[float | None]:
    reference = sample_reference(sample, substream_seed(cfg.seed, _REFERENCE_DATA, b))
    logs = _log_dispersions(
        reference, cfg.evaluated_k, cfg.kproto, weights, substream_seed(cfg.seed, _REFERENCE_FIT, b), earth
    )
    logger.debug(f"Reference draw {b + 1}/{cfg.B} done")
    return logs


def gap_select(data: Dataset, cfg: GapConfig, earth: EarthModel = WGS84) -> GapProfile:
    """Gap statistic over ``cfg.k_range`` on a stratified subsample of ``data``.

    The balance weights are estimated once on the subsample (or taken from
    the overrides) and shared by every observed and reference fit.
    """
    sample = stratified_sample(data, cfg.sample_fraction, cfg.strata, seed=substream_seed(cfg.seed, _SAMPLE))
    ks = list(cfg.evaluated_k)
    if ks[-1] > sample.n:
        raise ConfigurationError(
            f"Gap selection fits up to k={ks[-1]} but the subsample has only {sample.n} records; "
            "raise sample_fraction or lower k_max"
        )
    weights = resolve_weights(sample, cfg.lambda1, cfg.lambda2, earth)

    observed = _log_dispersions(sample, ks, cfg.kproto, weights, substream_seed(cfg.seed, _OBSERVED), earth)
    logger.info(f"Observed dispersions for k={ks[0]}..{ks[-1]} on {sample.n} records")

    references = Parallel(n_jobs=cfg.n_jobs or 1, prefer="threads")(
        delayed(_reference_log_dispersions)(sample, b, cfg, weights, earth) for b in range(cfg.B)
    )
    logger.info(f"Fitted {cfg.B} reference datasets")

    diagnostics = []
    rows = []
    for i, k in enumerate(ks):
        draws = [logs[i] for logs in references]
        if observed[i] is None or any(v is None for v in draws):
            which = "observed" if observed[i] is None else "a reference"
            diagnostics.append(f"k={k} excluded: {which} within-cluster dispersion is 0 or has an empty cluster")
            rows.append(GapRow(k=k, log_wk=observed[i], expected_log_wk_ref=None, sd_k=None, s_k=None, gap_k=None))
            continue
        expected = math.fsum(draws) / cfg.B
        sd = math.sqrt(math.fsum((v - expected) ** 2 for v in draws) / cfg.B)
        rows.append(
            GapRow(
                k=k,
                log_wk=observed[i],
                expected_log_wk_ref=expected,
                sd_k=sd,
                s_k=math.sqrt(1 + 1 / cfg.B) * sd,
                gap_k=expected - observed[i],
            )
        )

    for row, following in zip(rows, rows[1:]):
        if row.gap_k is not None and following.gap_k is not None:
            row.criterion = row.gap_k - (following.gap_k - following.s_k)

    if all(row.gap_k is None for row in rows):
        raise GapSelectionError("The gap statistic is undefined for every k")

    chosen = select_k([r.gap_k for r in rows], [r.s_k for r in rows], ks)
    if chosen is None:
        diagnostics.append(f"No k in {cfg.k_min}..{cfg.k_max} satisfies Gap(k) >= Gap(k+1) - s(k+1)")
    for message in diagnostics:
        logger.warning(message)
    if chosen is not None:
        logger.info(f"Gap statistic selects k={chosen}")

    return GapProfile(
        rows=rows,
        B=cfg.B,
        chosen_k=chosen,
        seed=cfg.seed,
        sample_size=sample.n,
        weights=weights,
        diagnostics=diagnostics,
    )

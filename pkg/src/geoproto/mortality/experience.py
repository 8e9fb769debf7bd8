"""Actual-to-expected (A/E) mortality ratios per cluster.

With face amounts FA_i, death indicators I_i and expected rates q_i:

    R = sum(FA_i * I_i) / sum(FA_i * q_i)
    Var(R) = sum(FA_i^2 * q_i * (1 - q_i)) / sum(FA_i * q_i)^2

Under the expected table E(R) = 1 and R is asymptotically normal, so
intervals are 1 +/- z * sd(R) by default.
"""

import logging
import math
from collections.abc import Sequence
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import norm

from geoproto.data.dataset import Dataset
from geoproto.exceptions import ConfigurationError, IngestError, UndefinedRatioError
from geoproto.models import (
    ClusterExperience,
    ClusteringModel,
    ConfidenceInterval,
    ExperienceReport,
    LyapunovDiagnostics,
)

logger = logging.getLogger(__name__)

Centering = Literal["null", "observed"]

# Flagged record ids kept in diagnostics; the count covers all of them
_MAX_FLAGGED_IDS = 100


class ExperienceRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    record_id: str
    cluster: int = Field(ge=0)
    face_amount: float = Field(ge=0, allow_inf_nan=False)
    death: Literal[0, 1]
    expected_rate: float = Field(ge=0, le=1)


class ExperienceColumns(BaseModel):
    """Names of the policy columns the A/E computation reads."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    face_amount: str = "face_amount"
    death: str = "death"
    expected_rate: str = "expected_rate"


def _records_frame(records: Sequence[ExperienceRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "record_id": [r.record_id for r in records],
            "cluster": [r.cluster for r in records],
            "face_amount": [r.face_amount for r in records],
            "death": [r.death for r in records],
            "expected_rate": [r.expected_rate for r in records],
        }
    )


def _ratio(
    face: np.ndarray, death: np.ndarray, q: np.ndarray, cluster: int | None
) -> tuple[float, float, float, float]:
    expected = math.fsum(face * q)
    if not expected > 0:
        raise UndefinedRatioError(cluster)
    actual = math.fsum(face * death)
    variance = math.fsum(face * face * q * (1 - q)) / (expected * expected)
    return actual, expected, actual / expected, variance


def _lyapunov(ids: np.ndarray, face: np.ndarray, q: np.ndarray, expected: float) -> LyapunovDiagnostics:
    c = face / expected
    spread = q * (1 - q)
    variances = c * c * spread
    third = c**3 * spread * (q * q + (1 - q) ** 2)
    degenerate = (q == 0) | (q == 1)
    return LyapunovDiagnostics(
        n=len(face),
        inf_variance=float(variances.min()),
        sup_third_moment=float(third.max()),
        zero_variance_records=int(degenerate.sum()),
        flagged_ids=[str(i) for i in ids[degenerate][:_MAX_FLAGGED_IDS]],
    )


def ae_ratio(records: Sequence[ExperienceRecord], cluster: int | None = None) -> ClusterExperience:
    """A/E aggregates of one group of policies."""
    frame = _records_frame(records)
    face = frame["face_amount"].to_numpy(np.float64)
    death = frame["death"].to_numpy(np.float64)
    q = frame["expected_rate"].to_numpy(np.float64)
    actual, expected, ratio, variance = _ratio(face, death, q, cluster)
    return ClusterExperience(
        cluster=cluster, n=len(records), actual=actual, expected=expected, ratio=ratio, variance=variance
    )


def ae_confidence_interval(
    experience: ClusterExperience, level: float, centering: Centering = "null"
) -> ConfidenceInterval:
    """Normal interval at ``level`` around 1 (``null``) or around R (``observed``)."""
    if not 0 < level < 1:
        raise ConfigurationError(f"Confidence level must be in (0, 1), got {level}")
    z = float(norm.ppf((1 + level) / 2))
    center = 1.0 if centering == "null" else experience.ratio
    half_width = z * experience.sd
    lower, upper = center - half_width, center + half_width
    if experience.ratio < lower:
        position = "below"
    elif experience.ratio > upper:
        position = "above"
    else:
        position = "inside"
    return ConfidenceInterval(level=level, z=z, lower=lower, upper=upper, center=center, position=position)


def lyapunov_check(records: Sequence[ExperienceRecord]) -> LyapunovDiagnostics:
    """Advisory CLT diagnostics: smallest per-policy variance, largest third moment.

    Policies with q in {0, 1} contribute no variance and are flagged.
    """
    frame = _records_frame(records)
    face = frame["face_amount"].to_numpy(np.float64)
    q = frame["expected_rate"].to_numpy(np.float64)
    expected = math.fsum(face * q)
    if not expected > 0:
        raise UndefinedRatioError(None)
    return _lyapunov(frame["record_id"].to_numpy(object), face, q, expected)


def validate_experience_frame(frame: pd.DataFrame, columns: ExperienceColumns) -> pd.DataFrame:
    """Parse and check the face amount, death and expected rate columns.

    Returns a frame with numeric ``face_amount``, ``death`` and ``expected_rate``
    columns (plus the untouched originals). Row numbers in errors count the
    CSV header as line 1.
    """
    missing = [c for c in (columns.face_amount, columns.death, columns.expected_rate) if c not in frame.columns]
    if missing:
        raise IngestError(f"Missing experience column(s): {', '.join(missing)}")

    def parsed(column: str) -> np.ndarray:
        values = pd.to_numeric(frame[column].astype(str).str.strip(), errors="coerce").to_numpy(np.float64)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise IngestError("unparseable or missing number", row=int(bad[0]) + 2, column=column)
        return values

    face = parsed(columns.face_amount)
    death = parsed(columns.death)
    q = parsed(columns.expected_rate)
    for values, column, ok, message in (
        (face, columns.face_amount, face >= 0, "face amount must be non-negative"),
        (death, columns.death, (death == 0) | (death == 1), "death indicator must be 0 or 1"),
        (q, columns.expected_rate, (q >= 0) & (q <= 1), "expected rate must lie in [0, 1]"),
    ):
        bad = np.flatnonzero(~ok)
        if bad.size:
            raise IngestError(message, row=int(bad[0]) + 2, column=column)

    out = frame.copy()
    out["face_amount"] = face
    out["death"] = death
    out["expected_rate"] = q
    return out


def _experience(
    ids: np.ndarray, face: np.ndarray, death: np.ndarray, q: np.ndarray,
    cluster: int | None, levels: Sequence[float], centering: Centering,
) -> ClusterExperience:
    actual, expected, ratio, variance = _ratio(face, death, q, cluster)
    experience = ClusterExperience(
        cluster=cluster,
        n=len(face),
        actual=actual,
        expected=expected,
        ratio=ratio,
        variance=variance,
        lyapunov=_lyapunov(ids, face, q, expected),
    )
    experience.intervals = [ae_confidence_interval(experience, level, centering) for level in levels]
    return experience


def report_from_frame(
    frame: pd.DataFrame,
    k: int | None = None,
    levels: Sequence[float] = (0.90, 0.95),
    centering: Centering = "null",
) -> ExperienceReport:
    """A/E report from a validated frame with ``record_id`` and ``cluster`` columns."""
    labels = frame["cluster"].to_numpy(np.int64)
    ids = frame["record_id"].to_numpy(object)
    face = frame["face_amount"].to_numpy(np.float64)
    death = frame["death"].to_numpy(np.float64)
    q = frame["expected_rate"].to_numpy(np.float64)
    k = k if k is not None else int(labels.max()) + 1

    clusters = []
    for cluster in range(k):
        members = labels == cluster
        clusters.append(_experience(ids[members], face[members], death[members], q[members], cluster, levels, centering))
    portfolio = _experience(ids, face, death, q, None, levels, centering)

    for experience in [*clusters, portfolio]:
        flags = ", ".join(
            f"{ci.level:g}: {ci.position}" for ci in experience.intervals
        )
        logger.info(f"{experience.label}: A/E {experience.ratio:.4f} (sd {experience.sd:.4f}; {flags})")
        if experience.lyapunov and experience.lyapunov.premise_weakened:
            logger.warning(
                f"{experience.label}: {experience.lyapunov.zero_variance_records} policies with q in {{0, 1}} "
                "carry no variance"
            )
    return ExperienceReport(clusters=clusters, portfolio=portfolio, levels=list(levels), centering=centering)


def experience_report(
    data: Dataset,
    model: ClusteringModel,
    levels: Sequence[float] = (0.90, 0.95),
    columns: ExperienceColumns | None = None,
    centering: Centering = "null",
) -> ExperienceReport:
    """Per-cluster and portfolio A/E from a dataset's payload columns."""
    columns = columns or ExperienceColumns()
    labels = np.asarray(model.assignment)
    if labels.shape != (data.n,):
        raise ConfigurationError(f"Model assigns {labels.size} records but the dataset has {data.n}")
    frame = pd.DataFrame(
        {
            "record_id": data.record_ids,
            "cluster": labels,
            columns.face_amount: data.payload(columns.face_amount).to_numpy(),
            columns.death: data.payload(columns.death).to_numpy(),
            columns.expected_rate: data.payload(columns.expected_rate).to_numpy(),
        }
    )
    return report_from_frame(validate_experience_frame(frame, columns), model.k, levels, centering)


def report_frame(report: ExperienceReport) -> pd.DataFrame:
    """One row per cluster plus a ``portfolio`` row, with per-level interval columns."""
    rows = []
    for experience in [*report.clusters, report.portfolio]:
        row = {
            "cluster": experience.label,
            "n": experience.n,
            "actual": experience.actual,
            "expected": experience.expected,
            "ratio": experience.ratio,
            "variance": experience.variance,
            "sd": experience.sd,
        }
        for ci in experience.intervals:
            tag = f"{ci.level * 100:g}"
            row[f"lower_{tag}"] = ci.lower
            row[f"upper_{tag}"] = ci.upper
            row[f"position_{tag}"] = ci.position
            row[f"significant_{tag}"] = ci.significant
        if experience.lyapunov is not None:
            row["inf_variance"] = experience.lyapunov.inf_variance
            row["sup_third_moment"] = experience.lyapunov.sup_third_moment
            row["zero_variance_records"] = experience.lyapunov.zero_variance_records
        rows.append(row)
    return pd.DataFrame(rows)


def join_expected_rates(
    portfolio: pd.DataFrame,
    table: pd.DataFrame,
    keys: Sequence[str],
    rate_column: str = "q",
    target: str = "expected_rate",
) -> pd.DataFrame:
    """Attach expected rates looked up by ``keys`` (for instance age, sex, smoker).

    Every portfolio row must match exactly one table row.
    """
    keys = list(keys)
    if not keys:
        raise ConfigurationError("Rate table join needs at least one key column")
    for name, frame, needed in (("portfolio", portfolio, keys), ("rate table", table, [*keys, rate_column])):
        missing = [c for c in needed if c not in frame.columns]
        if missing:
            raise IngestError(f"{name} lacks column(s): {', '.join(missing)}")

    lookup = table[[*keys, rate_column]].astype(str).apply(lambda s: s.str.strip())
    duplicated = lookup.duplicated(subset=keys)
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0]) + 2
        raise IngestError("duplicate key in rate table", row=row, column=", ".join(keys))
    lookup = lookup.rename(columns={rate_column: target})

    left = portfolio.drop(columns=[target], errors="ignore").copy()
    join_keys = [f"__key_{i}" for i in range(len(keys))]
    for key, name in zip(keys, join_keys):
        left[name] = left[key].astype(str).str.strip()
    lookup = lookup.rename(columns=dict(zip(keys, join_keys)))
    merged = left.merge(lookup, on=join_keys, how="left", validate="many_to_one")
    unmatched = np.flatnonzero(merged[target].isna().to_numpy())
    if unmatched.size:
        raise IngestError("no matching rate table row", row=int(unmatched[0]) + 2, column=", ".join(keys))
    logger.info(f"Joined expected rates for {len(merged)} policies on {keys}")
    return merged.drop(columns=join_keys)


def simulate_ratios(
    face_amount: np.ndarray, expected_rate: np.ndarray, simulations: int, seed: int = 0, chunk: int = 1000
) -> np.ndarray:
    """A/E ratios of ``simulations`` portfolios whose deaths follow the expected rates."""
    face = np.asarray(face_amount, dtype=np.float64)
    q = np.asarray(expected_rate, dtype=np.float64)
    expected = math.fsum(face * q)
    if not expected > 0:
        raise UndefinedRatioError(None)
    rng = np.random.default_rng(seed)
    ratios = np.empty(simulations)
    for start in range(0, simulations, chunk):
        size = min(chunk, simulations - start)
        deaths = rng.random((size, face.size)) < q
        ratios[start : start + size] = (deaths @ face) / expected
    return ratios

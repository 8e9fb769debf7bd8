"""CLI for geoproto."""

import hashlib
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import click
import numpy as np
import pandas as pd
from pydantic import ValidationError

from geoproto import __version__
from geoproto.cluster.distance import geodetic_distance_m
from geoproto.cluster.gap import GapConfig, gap_select
from geoproto.cluster.kproto import KProtoConfig, SpatialRule, describe_prototypes, fit
from geoproto.cluster.lambdas import estimate_lambdas, resolve_weights
from geoproto.cluster.profile import (
    categorical_profile,
    cluster_sizes,
    level_shares,
    numerical_profile,
)
from geoproto.config import RunConfig, get_settings, load_run_config
from geoproto.data.dataset import Dataset, IngestOptions, export_csv, ingest_csv, summarize
from geoproto.exceptions import ConfigurationError, GeoprotoError, IngestError, InputError
from geoproto.models import ClusteringModel, GeoPoint
from geoproto.mortality.experience import (
    ExperienceColumns,
    join_expected_rates,
    report_frame,
    report_from_frame,
    validate_experience_frame,
)
from geoproto.mortality.synth import SynthSpec, synth_portfolio
from geoproto.output import Provenance, RunManifest, csv_text, json_text, read_csv, write_csv, write_json

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def _float_list(ctx: click.Context, param: click.Parameter, value: str | None) -> list[float] | None:
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated numbers, got '{value}'") from e


def _coordinate(ctx: click.Context, param: click.Parameter, value: str) -> GeoPoint:
    parts = _float_list(ctx, param, value)
    if parts is None or len(parts) != 2:
        raise click.BadParameter(f"expected LAT,LON in degrees, got '{value}'")
    return GeoPoint.from_degrees(*parts)


def _config(ctx: click.Context, overrides: dict[str, Any]) -> RunConfig:
    return load_run_config(ctx.obj["config_path"], overrides)


def _provenance(cfg: RunConfig) -> Provenance:
    return Provenance(seed=cfg.seed, config_hash=cfg.config_hash())


def _load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data.path is None:
        raise ConfigurationError("Config key 'data.path' is required (set it in the config or pass --data)")
    options = IngestOptions(
        id_column=cfg.data.id_column,
        payload=tuple(cfg.data.payload),
        on_bad_row=cfg.data.on_bad_row,
        exclude={column: tuple(values) for column, values in cfg.data.exclude.items()},
    )
    return ingest_csv(cfg.data.path, cfg.build_schema(), options)


def _finish(command: str, cfg: RunConfig, outputs: list[Path]) -> None:
    RunManifest.create(command, _provenance(cfg), outputs).write(cfg.output_dir)
    for path in outputs:
        click.echo(f"Wrote {path}", err=True)


def _model_payload(model: ClusteringModel, data: Dataset) -> dict[str, Any]:
    return {
        "k": model.k,
        "weights": model.weights,
        "cost": {
            "total": model.cost_total,
            "numerical": model.cost_numerical,
            "categorical": model.cost_categorical,
            "spatial": model.cost_spatial,
        },
        "iterations": model.iterations,
        "converged": model.converged,
        "repair_exhausted": model.repair_exhausted,
        "restart_index": model.restart_index,
        "restart_seed": model.seed,
        "cost_history": model.cost_history,
        "cluster_sizes": model.cluster_sizes(),
        "prototypes": describe_prototypes(model, data),
    }


def _write_clustering(cfg: RunConfig, data: Dataset, model: ClusteringModel) -> list[Path]:
    provenance = _provenance(cfg)
    assignments = cfg.output_dir / "assignments.csv"
    model_path = cfg.output_dir / "model.json"
    write_csv(pd.DataFrame({"record_id": data.record_ids, "cluster": model.assignment}), assignments, provenance)
    write_json(_model_payload(model, data), model_path, provenance)
    return [assignments, model_path]


def _fit_full(ctx: click.Context, cfg: RunConfig, data: Dataset, k: int) -> ClusteringModel:
    weights = resolve_weights(data, cfg.cluster.lambda1, cfg.cluster.lambda2)
    kproto = KProtoConfig(
        k=k,
        weights=weights,
        max_iterations=cfg.cluster.max_iterations,
        restarts=cfg.cluster.restarts,
        spatial_rule=cfg.cluster.spatial_rule,
        seed=cfg.seed,
        n_jobs=ctx.obj["threads"],
    )
    return fit(data, kproto)


def _read_assignments(path: Path) -> pd.DataFrame:
    try:
        frame = read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as e:
        raise IngestError(f"Cannot read assignments {path}: {e}") from e
    missing = [c for c in ("record_id", "cluster") if c not in frame.columns]
    if missing:
        raise IngestError(f"{path} lacks column(s): {', '.join(missing)}")
    clusters = pd.to_numeric(frame["cluster"], errors="coerce")
    bad = np.flatnonzero(clusters.isna().to_numpy() | (clusters < 0).to_numpy())
    if bad.size:
        raise IngestError("cluster must be a non-negative integer", row=int(bad[0]) + 2, column="cluster")
    frame["record_id"] = frame["record_id"].str.strip()
    frame["cluster"] = clusters.astype(np.int64)
    return frame[["record_id", "cluster"]]


def _labels_for(data: Dataset, assignments: pd.DataFrame) -> np.ndarray:
    by_id = assignments.set_index("record_id")["cluster"]
    if by_id.index.has_duplicates:
        raise IngestError("Assignments list a record id more than once")
    labels = by_id.reindex(pd.Index(data.record_ids, dtype=object))
    if labels.isna().any():
        missing = labels.index[labels.isna()][0]
        raise IngestError(f"Record '{missing}' has no cluster in the assignments")
    return labels.to_numpy(np.int64)


@click.group()
@click.version_option(version=__version__)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="YAML run config (schema_version 1)",
)
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker cap (overrides GEOPROTO_THREADS)")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
@click.option("-q", "--quiet", is_flag=True, help="Warnings and errors only")
@click.pass_context
def main(ctx: click.Context, config_path: Path | None, threads: int | None, verbose: bool, quiet: bool) -> None:
    """Cluster mixed-type geospatial portfolios and study their mortality experience."""
    ctx.ensure_object(dict)
    settings = get_settings()
    level = logging.DEBUG if verbose else logging.WARNING if quiet else settings.log_level.upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)

    ctx.obj["config_path"] = config_path
    ctx.obj["threads"] = threads or settings.threads


def data_option(f):
    return click.option(
        "--data", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Input CSV (overrides data.path)"
    )(f)


def output_option(f):
    return click.option(
        "--output-dir", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory"
    )(f)


@main.command()
@data_option
@click.option("--export", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also write the ingested rows back out to this CSV")
@click.pass_context
def inspect(ctx: click.Context, data: Path | None, export: Path | None) -> None:
    """Ingest the data and print a per-attribute summary as CSV."""
    cfg = _config(ctx, {"data.path": data})
    dataset = _load_dataset(cfg)
    click.echo(csv_text(summarize(dataset), _provenance(cfg)), nl=False)
    if export is not None:
        export_csv(dataset, export)
        click.echo(f"Wrote {export}", err=True)


@main.command("lambda")
@data_option
@click.pass_context
def lambda_(ctx: click.Context, data: Path | None) -> None:
    """Estimate the balance weights lambda1 and lambda2 and print them as JSON."""
    cfg = _config(ctx, {"data.path": data})
    estimate = estimate_lambdas(_load_dataset(cfg))
    click.echo(json_text(estimate, _provenance(cfg)), nl=False)


@main.command()
@click.option("--from", "origin", required=True, callback=_coordinate, help="LAT,LON in degrees")
@click.option("--to", "destination", required=True, callback=_coordinate, help="LAT,LON in degrees")
def dist(origin: GeoPoint, destination: GeoPoint) -> None:
    """Great-circle distance in meters between two points."""
    click.echo(f"{geodetic_distance_m(origin, destination):.6f}")


@main.command()
@data_option
@output_option
@click.option("--k", type=click.IntRange(min=1), default=None, help="Number of clusters")
@click.option("--restarts", type=click.IntRange(min=1), default=None, help="Independent restarts (default 20)")
@click.option("--max-iter", type=click.IntRange(min=1), default=None, help="Iteration cap per restart (default 100)")
@click.option("--seed", type=int, default=None, help="Master seed")
@click.option("--lambda1", type=click.FloatRange(min=0), default=None, help="Categorical weight override")
@click.option("--lambda2", type=click.FloatRange(min=0), default=None, help="Spatial weight override")
@click.option("--spatial-rule", type=click.Choice([r.value for r in SpatialRule]), default=None,
              help="Spatial prototype update (default paper)")
@click.pass_context
def cluster(
    ctx: click.Context,
    data: Path | None,
    output_dir: Path | None,
    k: int | None,
    restarts: int | None,
    max_iter: int | None,
    seed: int | None,
    lambda1: float | None,
    lambda2: float | None,
    spatial_rule: str | None,
) -> None:
    """Fit k-prototypes and write assignments.csv and model.json."""
    cfg = _config(
        ctx,
        {
            "data.path": data,
            "output_dir": output_dir,
            "seed": seed,
            "cluster.k": k,
            "cluster.restarts": restarts,
            "cluster.max_iterations": max_iter,
            "cluster.lambda1": lambda1,
            "cluster.lambda2": lambda2,
            "cluster.spatial_rule": spatial_rule,
        },
    )
    if cfg.cluster.k is None:
        raise ConfigurationError("Config key 'cluster.k' is required (set it in the config or pass --k)")
    dataset = _load_dataset(cfg)
    model = _fit_full(ctx, cfg, dataset, cfg.cluster.k)
    _finish("cluster", cfg, _write_clustering(cfg, dataset, model))


@main.command("select-k")
@data_option
@output_option
@click.option("--k-max", type=click.IntRange(min=1), default=None, help="Largest k considered (default 10)")
@click.option("--B", "b", type=click.IntRange(min=1), default=None, help="Reference datasets (default 50)")
@click.option("--sample-fraction", type=click.FloatRange(min=0, max=1, min_open=True), default=None,
              help="Stratified subsample share (default 0.10)")
@click.option("--strata", multiple=True, help="Categorical attribute to stratify by (repeatable)")
@click.option("--seed", type=int, default=None, help="Master seed")
@click.option("--refit/--no-refit", default=None, help="Refit the full data with the chosen k")
@click.pass_context
def select_k(
    ctx: click.Context,
    data: Path | None,
    output_dir: Path | None,
    k_max: int | None,
    b: int | None,
    sample_fraction: float | None,
    strata: Sequence[str],
    seed: int | None,
    refit: bool | None,
) -> None:
    """Choose k with the gap statistic; writes gap.csv and gap.json."""
    cfg = _config(
        ctx,
        {
            "data.path": data,
            "output_dir": output_dir,
            "seed": seed,
            "gap.k_max": k_max,
            "gap.B": b,
            "gap.sample_fraction": sample_fraction,
            "gap.strata": list(strata) or None,
            "gap.refit": refit,
        },
    )
    dataset = _load_dataset(cfg)
    gap_cfg = GapConfig(
        k_max=cfg.gap.k_max,
        B=cfg.gap.B,
        sample_fraction=cfg.gap.sample_fraction,
        strata=tuple(cfg.gap.strata),
        kproto=KProtoConfig(
            k=1,
            max_iterations=cfg.cluster.max_iterations,
            restarts=cfg.cluster.restarts,
            spatial_rule=cfg.cluster.spatial_rule,
        ),
        lambda1=cfg.cluster.lambda1,
        lambda2=cfg.cluster.lambda2,
        seed=cfg.seed,
        n_jobs=ctx.obj["threads"],
    )
    profile = gap_select(dataset, gap_cfg)

    provenance = _provenance(cfg)
    gap_csv = cfg.output_dir / "gap.csv"
    gap_json = cfg.output_dir / "gap.json"
    write_csv(pd.DataFrame([row.model_dump() for row in profile.rows]), gap_csv, provenance)
    write_json(profile, gap_json, provenance)
    outputs = [gap_csv, gap_json]
    click.echo(f"chosen_k={profile.chosen_k if profile.chosen_k is not None else 'none'}")

    if cfg.gap.refit:
        if profile.chosen_k is None:
            logger.warning("No k was chosen; skipping the full-data refit")
        else:
            model = _fit_full(ctx, cfg, dataset, profile.chosen_k)
            outputs += _write_clustering(cfg, dataset, model)
    _finish("select-k", cfg, outputs)


@main.command()
@output_option
@click.option("--assignments", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="assignments.csv from cluster (default <output-dir>/assignments.csv)")
@click.option("--portfolio", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Policy CSV with face amount, death and expected rate (default data.path)")
@click.option("--levels", callback=_float_list, default=None, help="Confidence levels, e.g. 0.90,0.95")
@click.option("--centering", type=click.Choice(["null", "observed"]), default=None,
              help="Center intervals on 1 (null) or on the observed ratio")
@click.option("--rate-table", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="CSV of expected rates joined on --rate-keys")
@click.option("--rate-keys", default=None, help="Comma-separated join columns for --rate-table")
@click.pass_context
def experience(
    ctx: click.Context,
    output_dir: Path | None,
    assignments: Path | None,
    portfolio: Path | None,
    levels: list[float] | None,
    centering: str | None,
    rate_table: Path | None,
    rate_keys: str | None,
) -> None:
    """Actual-to-expected ratios per cluster; writes experience.csv and experience.json."""
    cfg = _config(
        ctx,
        {
            "output_dir": output_dir,
            "data.path": portfolio,
            "experience.levels": levels,
            "experience.centering": centering,
            "experience.rate_table": rate_table,
            "experience.rate_keys": [k.strip() for k in rate_keys.split(",")] if rate_keys else None,
        },
    )
    if cfg.data.path is None:
        raise ConfigurationError("A portfolio is required (pass --portfolio or set data.path)")
    assigned = _read_assignments(assignments or cfg.output_dir / "assignments.csv")

    try:
        policies = read_csv(cfg.data.path, dtype=str, keep_default_na=False)
    except FileNotFoundError as e:
        raise IngestError(f"Cannot read portfolio {cfg.data.path}: {e}") from e
    if cfg.experience.rate_table is not None:
        table = read_csv(cfg.experience.rate_table, dtype=str, keep_default_na=False)
        policies = join_expected_rates(
            policies, table, cfg.experience.rate_keys, cfg.experience.rate_column, cfg.experience.expected_rate
        )
    if cfg.data.id_column:
        if cfg.data.id_column not in policies.columns:
            raise IngestError(f"Portfolio lacks id column '{cfg.data.id_column}'")
        policies["record_id"] = policies[cfg.data.id_column].str.strip()
    else:
        policies["record_id"] = np.arange(len(policies)).astype(str)

    columns = ExperienceColumns(
        face_amount=cfg.experience.face_amount,
        death=cfg.experience.death,
        expected_rate=cfg.experience.expected_rate,
    )
    merged = assigned.merge(policies, on="record_id", how="left", validate="one_to_one", indicator=True)
    unmatched = merged.loc[merged["_merge"] == "left_only", "record_id"]
    if len(unmatched):
        raise IngestError(f"Record '{unmatched.iloc[0]}' is in the assignments but not in the portfolio")
    dropped = len(policies) - len(merged)
    if dropped:
        logger.info(f"{dropped} portfolio rows have no cluster and are left out")

    report = report_from_frame(
        validate_experience_frame(merged.drop(columns="_merge"), columns),
        levels=cfg.experience.levels,
        centering=cfg.experience.centering,
    )
    provenance = _provenance(cfg)
    csv_path = cfg.output_dir / "experience.csv"
    json_path = cfg.output_dir / "experience.json"
    write_csv(report_frame(report), csv_path, provenance)
    write_json(report, json_path, provenance)
    _finish("experience", cfg, [csv_path, json_path])


@main.command()
@data_option
@output_option
@click.option("--assignments", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="assignments.csv from cluster (default <output-dir>/assignments.csv)")
@click.option("--by", "by_column", default=None, help="Column whose levels are spread over clusters (shares.csv)")
@click.pass_context
def profile(
    ctx: click.Context,
    data: Path | None,
    output_dir: Path | None,
    assignments: Path | None,
    by_column: str | None,
) -> None:
    """Describe clusters: sizes, level mixes, numerical quartiles."""
    cfg = _config(ctx, {"data.path": data, "output_dir": output_dir})
    dataset = _load_dataset(cfg)
    labels = _labels_for(dataset, _read_assignments(assignments or cfg.output_dir / "assignments.csv"))

    provenance = _provenance(cfg)
    tables = {
        "sizes.csv": cluster_sizes(labels),
        "categorical.csv": categorical_profile(dataset, labels),
        "numerical.csv": numerical_profile(dataset, labels),
    }
    if by_column:
        tables["shares.csv"] = level_shares(dataset, labels, by_column)
    outputs = []
    for name, table in tables.items():
        path = cfg.output_dir / name
        write_csv(table, path, provenance)
        outputs.append(path)
    _finish("profile", cfg, outputs)


@main.command()
@output_option
@click.option("--n", type=click.IntRange(min=1), default=3000, show_default=True, help="Policies")
@click.option("--clusters", type=click.IntRange(min=1), default=3, show_default=True, help="Planted clusters")
@click.option("--separation", type=click.FloatRange(min=0, min_open=True), default=4.0, show_default=True,
              help="Cluster separation; larger is easier")
@click.option("--noise", type=click.FloatRange(min=0, min_open=True), default=0.08, show_default=True,
              help="Within-cluster spread on the latent scale")
@click.option("--q-low", type=click.FloatRange(0, 1), default=0.001, show_default=True, help="Lowest expected rate")
@click.option("--q-high", type=click.FloatRange(0, 1), default=0.02, show_default=True, help="Highest expected rate")
@click.option("--multipliers", callback=_float_list, default=None,
              help="True-to-expected mortality per cluster, e.g. 1,0.7,1.2")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed")
def synth(
    output_dir: Path | None,
    n: int,
    clusters: int,
    separation: float,
    noise: float,
    q_low: float,
    q_high: float,
    multipliers: list[float] | None,
    seed: int,
) -> None:
    """Generate portfolio.csv, truth.csv and config.yaml with planted clusters."""
    spec = SynthSpec(
        n=n,
        clusters=clusters,
        separation=separation,
        noise=noise,
        q_low=q_low,
        q_high=q_high,
        mortality_multipliers=tuple(multipliers or ()),
        seed=seed,
    )
    directory = output_dir or Path("geoproto-synth")
    spec_hash = hashlib.sha256(spec.model_dump_json().encode("utf-8")).hexdigest()
    provenance = Provenance(seed=seed, config_hash=spec_hash)
    outputs = synth_portfolio(spec, directory, provenance)
    RunManifest.create("synth", provenance, outputs).write(directory)
    for path in outputs:
        click.echo(f"Wrote {path}", err=True)


def run(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code.

    0 on success, 1 for invalid input or usage, 2 for failed computations.
    """
    try:
        result = main.main(args=list(argv) if argv is not None else None, prog_name="geoproto", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except (InputError, ValidationError) as e:
        click.echo(f"Error: {e}", err=True)
        return 1
    except GeoprotoError as e:
        click.echo(f"Error: {e}", err=True)
        return 2
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        click.echo(f"Error: {e}", err=True)
        return 2
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(run())

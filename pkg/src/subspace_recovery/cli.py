import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from subspace_recovery.domain import gamma_profile, logger
from subspace_recovery.errors import DataFileError, InputError, SubspaceRecoveryError
from subspace_recovery.harness import simulate, sweep, write_sweep_csv, write_trials_csv
from subspace_recovery.linalg import all_principal_angles, max_principal_angle_sin
from subspace_recovery.linmodel import LinearEstimator
from subspace_recovery.pca import PcaEstimator, check_assumption2, estimate_noise_levels
from subspace_recovery.schemas import (
    AnglesReport,
    Basis,
    EstimateReport,
    ExperimentConfig,
    GridPoint,
    LinearDataset,
    NoiseProfile,
    NoiseSpec,
    PcaDataset,
    WeightScheme,
)
from subspace_recovery.synth import gen_linear, gen_pca
from subspace_recovery.utils import RandomStreams, expand_pattern, format_float, parse_config_file

PathLike = Union[str, Path]

CSV_OPTIONS: Dict[str, Any] = {"index": False, "float_format": "%.17g", "lineterminator": "\n"}


def _read_frame(path: PathLike, **kwargs: Any) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except FileNotFoundError:
        raise DataFileError(f"File not found: {path}")
    except pd.errors.EmptyDataError:
        raise DataFileError(f"File is empty: {path}")
    except pd.errors.ParserError as e:
        raise DataFileError(f"Cannot parse {path}: {e}")
    except UnicodeDecodeError as e:
        raise DataFileError(f"{path} is not valid UTF-8 text: {e.reason} at byte {e.start}")


def _numeric_block(frame: pd.DataFrame, columns: List[str]) -> np.ndarray:
    """Coerce columns to floats, reporting the first bad cell by its file line (header is line 1)."""
    coerced = frame[columns].apply(pd.to_numeric, errors="coerce")
    bad = coerced.isna().any(axis=1) | ~np.isfinite(coerced.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataFileError("non-numeric or missing value", line=row + 2)
    values: np.ndarray = coerced.to_numpy(dtype=np.float64)
    return values


def _feature_columns(frame: pd.DataFrame, leading: List[str]) -> List[str]:
    columns = [str(column) for column in frame.columns]
    if columns[: len(leading)] != leading:
        raise DataFileError(f"header must start with {','.join(leading)}", line=1)
    features = columns[len(leading) :]
    expected = [f"x_{index}" for index in range(len(features))]
    if not features or features != expected:
        raise DataFileError(f"expected feature columns x_0..x_{{d-1}}, got {','.join(features)}", line=1)
    return features


def _user_rows(frame: pd.DataFrame) -> Dict[str, np.ndarray]:
    """Row positions per user, users in order of first appearance."""
    if frame["user_id"].isna().any():
        row = int(np.flatnonzero(frame["user_id"].isna().to_numpy())[0])
        raise DataFileError("missing user id", line=row + 2)
    return {
        str(user_id): group.index.to_numpy()
        for user_id, group in frame.reset_index(drop=True).groupby("user_id", sort=False)
    }


def read_pca_csv(path: PathLike) -> PcaDataset:
    """Read `user_id,x_0,...,x_{d-1}` rows; rows of one user need not be contiguous."""
    frame = _read_frame(path, dtype={"user_id": str})
    features = _feature_columns(frame, ["user_id"])
    values = _numeric_block(frame, features)
    groups = _user_rows(frame)
    return PcaDataset(
        users=[values[rows] for rows in groups.values()],
        user_ids=list(groups),
        d=len(features),
    )


def read_linear_csv(path: PathLike) -> LinearDataset:
    """Read `user_id,y,x_0,...,x_{d-1}` rows."""
    frame = _read_frame(path, dtype={"user_id": str})
    features = _feature_columns(frame, ["user_id", "y"])
    values = _numeric_block(frame, ["y"] + features)
    groups = _user_rows(frame)
    return LinearDataset(
        features=[values[rows, 1:] for rows in groups.values()],
        responses=[values[rows, 0] for rows in groups.values()],
        user_ids=list(groups),
        d=len(features),
    )


def write_pca_csv(dataset: PcaDataset, path: PathLike) -> None:
    columns = [f"x_{index}" for index in range(dataset.d)]
    frames = [
        pd.DataFrame(block, columns=columns).assign(user_id=user_id)[["user_id"] + columns]
        for user_id, block in zip(dataset.user_ids, dataset.users)
    ]
    pd.concat(frames, ignore_index=True).to_csv(path, **CSV_OPTIONS)


def write_linear_csv(dataset: LinearDataset, path: PathLike) -> None:
    columns = [f"x_{index}" for index in range(dataset.d)]
    frames = [
        pd.DataFrame(x, columns=columns).assign(user_id=user_id, y=y)[["user_id", "y"] + columns]
        for user_id, x, y in zip(dataset.user_ids, dataset.features, dataset.responses)
    ]
    pd.concat(frames, ignore_index=True).to_csv(path, **CSV_OPTIONS)


def write_basis_csv(basis: Basis, path: PathLike) -> None:
    pd.DataFrame(basis.entries).to_csv(path, header=False, **CSV_OPTIONS)


def read_basis_csv(path: PathLike) -> Basis:
    frame = _read_frame(path, header=None)
    values = _numeric_block(frame, list(frame.columns))
    try:
        return Basis(entries=values)
    except ValidationError as e:
        raise DataFileError(f"{path} does not hold an orthonormal basis: {e.errors()[0]['msg']}")


def _emit(text: str, output: Optional[str]) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _float_list(raw: Optional[str]) -> Optional[List[float]]:
    if raw is None:
        return None
    try:
        values = [float(item) for item in raw.split(",") if item.strip()]
    except ValueError:
        raise InputError(f"Expected a comma-separated list of numbers, got '{raw}'")
    if not values:
        raise InputError(f"Expected at least one number, got '{raw}'")
    return values


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """File values first, then every flag the user actually passed."""
    values: Dict[str, Any] = {}
    if args.config:
        values.update(parse_config_file(args.config, ExperimentConfig.model_fields))
    for key in ExperimentConfig.model_fields:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return ExperimentConfig(**values)


def cmd_estimate(args: argparse.Namespace) -> int:
    dataset: Union[PcaDataset, LinearDataset]
    if args.setting == "pca":
        dataset = read_pca_csv(args.input)
        estimator: Union[PcaEstimator, LinearEstimator] = PcaEstimator(workers=args.workers or 1)
    else:
        dataset = read_linear_csv(args.input)
        estimator = LinearEstimator(workers=args.workers or 1)

    explicit = _float_list(args.explicit_weights)
    scheme = WeightScheme(variant="explicit", weights=explicit) if explicit else WeightScheme(variant=args.weights)

    noise: Optional[NoiseProfile] = None
    etas = _float_list(args.etas)
    if args.sigma is not None:
        if etas is None and isinstance(dataset, PcaDataset):
            logger.warning("No etas given; using heuristic per-user noise estimates")
            estimated = estimate_noise_levels(dataset)
            finite = [eta for eta in estimated if not np.isnan(eta)]
            # single-sample users are dropped by the estimator; any finite placeholder works
            etas = [eta if not np.isnan(eta) else max(finite, default=1.0) for eta in estimated]
        if etas is not None:
            noise = NoiseProfile(sigma=args.sigma, etas=expand_pattern(etas, dataset.n))
    if scheme.variant == "optimal" and args.setting == "linear":
        raise InputError("Information-optimal weights are defined for the pca setting only")
    if scheme.variant == "optimal" and noise is None:
        raise InputError("Optimal weights need --sigma")

    estimate = estimator.estimate_subspace(dataset, args.k, scheme, noise)
    write_basis_csv(estimate.basis, args.output)

    assumption2 = None
    counts = dataset.sample_counts
    usable = [index for index, m in enumerate(counts) if m >= 2]
    if isinstance(dataset, PcaDataset) and noise is not None and min(noise.etas) > 0 and len(usable) >= args.k:
        kept = NoiseProfile(sigma=noise.sigma, etas=[noise.etas[index] for index in usable])
        profile = gamma_profile(kept, [counts[index] for index in usable], args.k)
        assumption2 = check_assumption2(profile, args.delta, args.c_star)
    report = EstimateReport(
        setting=args.setting,
        d=dataset.d,
        k=args.k,
        n_users=dataset.n,
        eigenvalues=[float(value) for value in estimate.eigen.values],
        gap=estimate.eigen.gap,
        degenerate_gap=estimate.degenerate_gap,
        weights={user_id: float(w) for user_id, w in zip(dataset.user_ids, estimate.weights)},
        dropped_users=estimate.dropped_users,
        assumption2=assumption2,
    )
    logger.info(f"Estimated a {args.k}-dim subspace from {dataset.n} users; basis written to {args.output}")

    if args.format == "json":
        _emit(report.model_dump_json(), args.report)
        return 0
    lines = [
        f"eigenvalues: {' '.join(format_float(value) for value in report.eigenvalues)}",
        f"gap: {format_float(report.gap)}",
        f"degenerate_gap: {str(report.degenerate_gap).lower()}",
    ]
    lines += [f"weight {user_id}: {format_float(w)}" for user_id, w in report.weights.items()]
    lines += [f"dropped {user_id}" for user_id in report.dropped_users]
    if assumption2 is not None:
        lines.append(f"assumption2: holds={str(assumption2.holds).lower()} margin={format_float(assumption2.margin)}")
    _emit("\n".join(lines), args.report)
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    config = load_config(args)
    n = config.n[0]
    point = GridPoint(n=n, m_pattern=config.m_pattern or [config.m[0]], weights="uniform")
    streams = RandomStreams(config.seed, 0)
    noise = NoiseSpec(kind=config.noise, etas=config.etas_for(n), alpha=config.alpha, scale=config.noise_scale)
    if config.setting == "pca":
        dataset, truth = gen_pca(
            config.d, config.k, point.sample_counts(), config.sigma, noise, streams, config.mean_family
        )
        write_pca_csv(dataset, args.data_output)
    else:
        linear_data, truth = gen_linear(
            config.d, config.k, point.sample_counts(), config.sigma, noise, streams, config.r_cap, config.measurement
        )
        write_linear_csv(linear_data, args.data_output)
    if args.basis_output:
        write_basis_csv(truth.basis, args.basis_output)
    logger.info(f"Generated {config.setting} data for {n} users in d={config.d}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args)
    trials = simulate(config)
    if args.format == "json":
        payload = [
            {"n": point.n, "m": point.m_label, "weights": point.weights, **result.model_dump()}
            for point, result in trials
        ]
        _emit(json.dumps({"trials": payload}), config.output)
        return 0
    _emit(write_trials_csv(trials), config.output)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args)
    rows = sweep(config)
    if args.format == "json":
        _emit(json.dumps({"rows": [row.model_dump() for row in rows]}), config.output)
        return 0
    _emit(write_sweep_csv(rows), config.output)
    return 0


def cmd_angles(args: argparse.Namespace) -> int:
    first = read_basis_csv(args.first)
    second = read_basis_csv(args.second)
    if first.k > second.k:
        first, second = second, first
    report = AnglesReport(
        angles=all_principal_angles(first, second),
        max_sin=max_principal_angle_sin(first, second) if first.k == second.k else None,
    )
    if args.format == "json":
        _emit(report.model_dump_json(), None)
        return 0
    lines = [f"angles: {' '.join(format_float(angle) for angle in report.angles)}"]
    if report.max_sin is not None:
        lines.append(f"max_sin: {format_float(report.max_sin)}")
    _emit("\n".join(lines), None)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=["text", "json"], default="text")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value file; flags override its values")
    parser.add_argument("--setting", choices=["pca", "linear"])
    parser.add_argument("--d", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--n", help="User counts, comma separated")
    parser.add_argument("--m", help="Samples per user, comma separated sweep values")
    parser.add_argument("--m-pattern", dest="m_pattern", help="Per-user sample counts cycled over users")
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--noise", choices=["spherical", "diagonal", "complement", "independent", "measurement"])
    parser.add_argument("--etas", help="Per-user noise levels cycled over users")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--noise-scale", dest="noise_scale", type=float)
    parser.add_argument("--mean-family", dest="mean_family", choices=["gaussian", "rademacher"])
    parser.add_argument("--measurement", choices=["rademacher", "gaussian"])
    parser.add_argument("--r-cap", dest="r_cap", type=float)
    parser.add_argument("--weights", help="Weight schemes, comma separated (uniform, optimal)")
    parser.add_argument("--estimator", choices=["pair", "single"])
    parser.add_argument("--delta", type=float)
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--bound-constant", dest="bound_constant", type=float)
    parser.add_argument("--c-star", dest="c_star", type=float)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--record-timing", dest="record_timing", action="store_const", const=True, default=None)
    parser.add_argument("--output", help="Output path (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subspace-recovery", description="Subspace recovery from per-user samples")
    subparsers = parser.add_subparsers(dest="command", required=True)

    estimate = subparsers.add_parser("estimate", help="Estimate a subspace from a data CSV")
    estimate.add_argument("input")
    estimate.add_argument("--setting", choices=["pca", "linear"], default="pca")
    estimate.add_argument("--k", type=int, required=True)
    estimate.add_argument("--weights", choices=["uniform", "optimal"], default="uniform")
    estimate.add_argument("--explicit-weights", dest="explicit_weights", help="One weight per user, summing to 1")
    estimate.add_argument("--sigma", type=float)
    estimate.add_argument("--etas", help="Per-user noise levels cycled over users")
    estimate.add_argument("--delta", type=float, default=0.05)
    estimate.add_argument("--c-star", dest="c_star", type=float, default=4.0)
    estimate.add_argument("--workers", type=int)
    estimate.add_argument("--output", required=True, help="Basis CSV path")
    estimate.add_argument("--report", help="Report path (stdout when omitted)")
    _add_common(estimate)
    estimate.set_defaults(handler=cmd_estimate)

    generate = subparsers.add_parser("generate", help="Write a synthetic dataset")
    _add_experiment_flags(generate)
    generate.add_argument("--data-output", dest="data_output", required=True)
    generate.add_argument("--basis-output", dest="basis_output")
    _add_common(generate)
    generate.set_defaults(handler=cmd_generate)

    for name, handler, help_text in (
        ("simulate", cmd_simulate, "Per-trial results for every grid point"),
        ("sweep", cmd_sweep, "Aggregated rows per grid point"),
    ):
        sub = subparsers.add_parser(name, help=help_text)
        _add_experiment_flags(sub)
        _add_common(sub)
        sub.set_defaults(handler=handler)

    angles = subparsers.add_parser("angles", help="Principal angles between two basis CSVs")
    angles.add_argument("first")
    angles.add_argument("second")
    _add_common(angles)
    angles.set_defaults(handler=cmd_angles)
    return parser


def _fail(code: str, message: str) -> int:
    sys.stderr.write(f"error: {code}: {message}\n")
    return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        result: int = args.handler(args)
        return result
    except SubspaceRecoveryError as e:
        return _fail(e.code, e.message)
    except ValidationError as e:
        details = "; ".join(f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in e.errors())
        return _fail("validation_error", details)
    except ValueError as e:
        return _fail("input_error", str(e))
    except OSError as e:
        return _fail("io_error", str(e))


if __name__ == "__main__":
    sys.exit(main())

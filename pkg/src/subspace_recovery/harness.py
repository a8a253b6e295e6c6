import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import linregress

from subspace_recovery.domain import WeightedMomentEstimator, logger
from subspace_recovery.errors import DegenerateGapError, InputError, RankDeficientError
from subspace_recovery.linalg import davis_kahan_bound, max_principal_angle_sin
from subspace_recovery.linmodel import LinearCovarianceBaseline, LinearEstimator, linear_bound_report
from subspace_recovery.pca import PcaCovarianceBaseline, PcaEstimator, bound_report, kl_structured_gaussians
from subspace_recovery.schemas import (
    ExperimentConfig,
    FloatArray,
    GridPoint,
    NoiseProfile,
    NoiseSpec,
    SlopeFit,
    SubspaceEstimate,
    SweepRow,
    TrialResult,
    WeightScheme,
)
from subspace_recovery.synth import gen_linear, gen_pca
from subspace_recovery.utils import RandomStreams, trial_seed

SWEEP_COLUMNS = list(SweepRow.model_fields)
TRIAL_COLUMNS = ["n", "m", "weights"] + list(TrialResult.model_fields)

PointTrial = Tuple[GridPoint, TrialResult]


def _estimator(config: ExperimentConfig) -> WeightedMomentEstimator[Any]:
    if config.setting == "pca":
        return PcaEstimator() if config.estimator == "pair" else PcaCovarianceBaseline()
    return LinearEstimator() if config.estimator == "pair" else LinearCovarianceBaseline()


def _signal_matrix(vectors: FloatArray, weights: FloatArray) -> FloatArray:
    result: FloatArray = (vectors.T * weights) @ vectors
    return result


def _chain_bound(signal: FloatArray, estimate: SubspaceEstimate, k: int) -> Optional[float]:
    try:
        return davis_kahan_bound(signal, estimate.matrix, k)
    except DegenerateGapError:
        return None


def _linear_bound_etas(config: ExperimentConfig, etas: List[float]) -> List[float]:
    """Measurement-dependent noise ignores the configured etas; its conditional scale is s·√(d − k)."""
    if config.noise != "measurement":
        return etas
    scale = config.noise_scale if config.noise_scale is not None else config.sigma
    return [scale * math.sqrt(config.d - config.k)] * len(etas)


def run_trial(config: ExperimentConfig, trial_index: int, point: Optional[GridPoint] = None) -> TrialResult:
    """
    Generate one synthetic dataset, estimate its subspace and evaluate the bounds.

    The result is a function of (config, grid point, trial_index) only. Failures are logged and
    recorded on the result with the error code instead of being raised.
    """
    point = point or config.grid_points()[0]
    seed = trial_seed(config.seed, trial_index)
    streams = RandomStreams(config.seed, trial_index)
    counts = point.sample_counts()
    etas = config.etas_for(point.n)
    noise = NoiseSpec(kind=config.noise, etas=etas, alpha=config.alpha, scale=config.noise_scale)
    started = time.perf_counter()

    try:
        estimator = _estimator(config)
        scheme = WeightScheme(variant=point.weights)
        if config.setting == "pca":
            dataset, truth = gen_pca(
                config.d, config.k, counts, config.sigma, noise, streams, mean_family=config.mean_family
            )
            estimate = estimator.estimate_subspace(
                dataset, config.k, scheme, NoiseProfile(sigma=config.sigma, etas=etas)
            )
        else:
            linear_data, truth = gen_linear(
                config.d,
                config.k,
                counts,
                config.sigma,
                noise,
                streams,
                r_cap=config.r_cap,
                measurement=config.measurement,
            )
            estimate = estimator.estimate_subspace(linear_data, config.k, scheme)

        sin_theta = max_principal_angle_sin(estimate.basis, truth.basis)
        signal = _signal_matrix(truth.vectors, estimate.weights)
        upper_general: Optional[float] = None
        upper_weighted: Optional[float] = None
        lower: Optional[float] = None
        kl: Optional[float] = None
        try:
            if config.setting == "pca":
                report = bound_report(
                    truth.vectors,
                    estimate.weights,
                    config.sigma,
                    etas,
                    counts,
                    config.k,
                    config.delta,
                    config.bound_constant,
                    config.c_star,
                )
                upper_general, upper_weighted, lower = report.upper_general, report.upper_weighted, report.lower
            else:
                upper_general = linear_bound_report(
                    truth.vectors,
                    _linear_bound_etas(config, etas),
                    counts,
                    config.k,
                    config.delta,
                    config.bound_constant,
                ).bound
        except RankDeficientError as e:
            logger.warning(f"Trial {trial_index}: bounds skipped ({e.message})")
        if config.setting == "pca" and len(set(etas)) == 1 and etas[0] > 0:
            kl = kl_structured_gaussians(config.sigma, etas[0], truth.basis, estimate.basis)

        return TrialResult(
            trial_index=trial_index,
            seed=seed,
            sin_theta=sin_theta,
            gap=estimate.eigen.gap,
            upper_general=upper_general,
            upper_weighted=upper_weighted,
            lower=lower,
            davis_kahan=_chain_bound(signal, estimate, config.k),
            kl=kl,
            elapsed_ms=(time.perf_counter() - started) * 1000.0 if config.record_timing else None,
        )
    except Exception as e:
        logger.error(f"Trial {trial_index} at n={point.n}, m={point.m_label} failed: {e}")
        return TrialResult(
            trial_index=trial_index,
            seed=seed,
            elapsed_ms=(time.perf_counter() - started) * 1000.0 if config.record_timing else None,
            error=getattr(e, "code", type(e).__name__),
        )


def _run_task(task: Tuple[ExperimentConfig, GridPoint, int]) -> TrialResult:
    config, point, trial_index = task
    return run_trial(config, trial_index, point)


def simulate(config: ExperimentConfig) -> List[PointTrial]:
    """
    Run every trial of every grid point, in grid order then trial order.

    With more than one worker, trials run in a process pool; results come back in submission
    order, so the output does not depend on the worker count.
    """
    points = config.grid_points()
    tasks = [(config, point, trial) for point in points for trial in range(config.trials)]
    logger.info(f"Running {len(tasks)} trials over {len(points)} grid points with {config.workers} worker(s)")
    if config.workers > 1:
        chunksize = max(1, len(tasks) // (config.workers * 4))
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            results = list(executor.map(_run_task, tasks, chunksize=chunksize))
    else:
        results = [_run_task(task) for task in tasks]
    return [(task[1], result) for task, result in zip(tasks, results)]


def _median(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    return float(np.median(present)) if present else None


def summarize(config: ExperimentConfig, point: GridPoint, results: Sequence[TrialResult]) -> SweepRow:
    sins = [result.sin_theta for result in results if result.sin_theta is not None]
    failed = sum(1 for result in results if result.failed)
    if failed:
        logger.warning(f"{failed} of {len(results)} trials failed at n={point.n}, m={point.m_label}")
    quartiles: List[Optional[float]] = [None, None, None]
    if sins:
        quartiles = [float(value) for value in np.percentile(sins, [25, 50, 75])]
    q25, median, q75 = quartiles
    elapsed = [result.elapsed_ms for result in results if result.elapsed_ms is not None]
    return SweepRow(
        setting=config.setting,
        d=config.d,
        k=config.k,
        n=point.n,
        m=point.m_label,
        sigma=config.sigma,
        eta_summary=config.eta_summary,
        weights=point.weights,
        delta=config.delta,
        trials=len(results),
        median_sin=median,
        q25=q25,
        q75=q75,
        upper_weighted=_median([result.upper_weighted for result in results]),
        lower=_median([result.lower for result in results]),
        failed=failed,
        elapsed_ms_total=float(sum(elapsed)) if config.record_timing else None,
    )


def sweep(config: ExperimentConfig) -> List[SweepRow]:
    """One aggregated row per grid point: quartiles of sin θ, bound values and the failure count."""
    trials = simulate(config)
    rows: List[SweepRow] = []
    for start in range(0, len(trials), config.trials):
        chunk = trials[start : start + config.trials]
        point = chunk[0][0]
        row = summarize(config, point, [result for _, result in chunk])
        logger.info(f"Grid point n={row.n}, m={row.m}, weights={row.weights}: median sin θ {row.median_sin}")
        rows.append(row)
    return rows


def fit_loglog_slope(points: Sequence[Tuple[float, float]]) -> SlopeFit:
    """
    Least-squares line through (log x, log y).

    Raises:
        InputError: With fewer than three points or any nonpositive coordinate.
    """
    if len(points) < 3:
        raise InputError(f"Need at least 3 points for a slope fit, got {len(points)}")
    xs = np.array([x for x, _ in points], dtype=np.float64)
    ys = np.array([y for _, y in points], dtype=np.float64)
    if np.any(xs <= 0) or np.any(ys <= 0) or not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise InputError("Log-log fit needs finite positive values")
    log_x, log_y = np.log(xs), np.log(ys)
    if np.ptp(log_x) == 0:
        raise InputError("Log-log fit needs at least two distinct x values")
    if np.ptp(log_y) == 0:
        return SlopeFit(slope=0.0, intercept=float(log_y[0]), r_squared=1.0)
    fit = linregress(log_x, log_y)
    return SlopeFit(slope=float(fit.slope), intercept=float(fit.intercept), r_squared=float(fit.rvalue) ** 2)


def _to_csv(frame: pd.DataFrame, path: Optional[Union[str, Path]]) -> str:
    text: str = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n", na_rep="")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def sweep_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=SWEEP_COLUMNS)


def write_sweep_csv(rows: Sequence[SweepRow], path: Optional[Union[str, Path]] = None) -> str:
    return _to_csv(sweep_frame(rows), path)


def write_trials_csv(trials: Sequence[PointTrial], path: Optional[Union[str, Path]] = None) -> str:
    records = [
        {"n": point.n, "m": point.m_label, "weights": point.weights, **result.model_dump()} for point, result in trials
    ]
    return _to_csv(pd.DataFrame(records, columns=TRIAL_COLUMNS), path)


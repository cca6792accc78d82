"""Experiment validation, dispatch and artifact writing.

``run`` turns a validated :class:`ExperimentConfig` into three artifacts in
the output directory: ``results.csv`` (long format: path_id, t, series,
value), ``summary.json`` (scalar verdicts and estimates) and, for cps
experiments, ``certificate.txt``. Every file is written to a temporary name
and renamed into place.
"""

import contextlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..bessel import (
    BesqParams,
    MartingaleModel,
    besq_ensemble,
    cfs_family,
    cfs_probe,
    coupled_besq,
    coupled_comparison_ensemble,
    frozen_target,
    radial_decompose,
    ramp_target,
    support_probability_curve,
)
from ..conditioned_model import GRID_ONLY_NOTE, ConditionedSampler, acceptance_rate, sample_conditioned_ensemble
from ..config import Config
from ..core import DiversityRegion, PathEnsemble, RngStream, TimeGrid
from ..cps import (
    Certificate,
    build_scenario_tree,
    cps_certificate,
    epsilon_on_knots,
    increment_support_probe,
    martingale_tilt,
    shadow_price,
)
from ..diversity import PortfolioSpec, diversity_summary, portfolio_values, relative_performance
from ..errors import (
    CertificateFailedError,
    ConfigValidationError,
    ShadowPriceError,
    SimulationDivergedError,
)
from ..logger import get_logger
from ..sde_engine import ArctanModel, DiffusionModel, DriftSpec, FernholzParams, VolatilitySpec, fernholz_model
from ..stats import mean_estimate
from .models import (
    BaseSummary,
    BesselSummary,
    CfsSummary,
    ConditionedSummary,
    CpsMode,
    CpsSummary,
    DiversityResult,
    ExperimentConfig,
    ExperimentKind,
    ModelBlock,
    ModelType,
    SimulateSummary,
)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3
EXIT_CERTIFICATE = 4

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.json"
CERTIFICATE_FILE = "certificate.txt"
ARTIFACTS = (RESULTS_FILE, SUMMARY_FILE, CERTIFICATE_FILE)
RESULT_COLUMNS = ["path_id", "t", "series", "value"]

# sup of the top arctan weight is 1 / (1 + exp(-pi/2))
ARCTAN_DELTA_BOUND = 1.0 - 1.0 / (1.0 + float(np.exp(-np.pi / 2.0)))
REGION_MODELS = (ModelType.FERNHOLZ, ModelType.ARCTAN, ModelType.CONDITIONED)
BESQ_MARGINAL_FRACTIONS = (0.25, 0.5, 1.0)


# Validation

def model_dimension(block: ModelBlock) -> Optional[int]:
    """Number of assets implied by the model block, or None if it cannot be told."""
    if block.type is ModelType.ARCTAN:
        return 2
    if block.type is ModelType.FERNHOLZ and block.g:
        return len(block.g)
    if block.sigma:
        return len(block.sigma)
    return None


def _matrix_violations(name: str, rows: Optional[List[List[float]]], n_rows: Optional[int] = None) -> List[str]:
    if not rows:
        return [f"{name} is required"]
    if len({len(row) for row in rows}) != 1 or not rows[0]:
        return [f"{name} rows must be nonempty and of equal length"]
    found = []
    if not np.all(np.isfinite(np.array(rows, dtype=float))):
        found.append(f"{name} entries must be finite")
    if n_rows is not None and len(rows) != n_rows:
        found.append(f"{name} must have {n_rows} rows, got {len(rows)}")
    return found


def _model_violations(block: ModelBlock, kind: ExperimentKind) -> List[str]:
    found: List[str] = []
    n = model_dimension(block)
    if block.type is ModelType.FERNHOLZ:
        if not block.g or len(block.g) < 2:
            found.append("model.g needs at least two entries")
        elif any(g <= 0 for g in block.g):
            found.append("model.g entries must be positive")
        if block.M is not None and block.M <= 0:
            found.append("model.M must be positive")
    if block.type is not ModelType.ARCTAN:
        found.extend(_matrix_violations("model.sigma", block.sigma, n))
    if n is None:
        return found

    if not 0.0 < block.delta < 1.0:
        found.append(f"model.delta must lie in (0, 1), got {block.delta:g}")
    elif 1.0 - block.delta <= 1.0 / n:
        found.append(f"O(δ) empty: 1 - delta = {1.0 - block.delta:g} <= 1/n = {1.0 / n:g}")

    if block.type is ModelType.CUSTOM and block.drift is not None and len(block.drift) != n:
        found.append(f"model.drift must have {n} entries, got {len(block.drift)}")

    s0 = np.ones(n) if block.s0 is None else np.array(block.s0, dtype=float)
    if s0.shape != (n,):
        found.append(f"model.s0 must have {n} entries, got {s0.size}")
    elif not np.all(np.isfinite(s0)) or np.any(s0 <= 0):
        found.append("model.s0 entries must be positive")
    elif block.type is ModelType.ARCTAN and abs(np.log(s0[1] / s0[0])) >= np.pi / 2.0:
        found.append("model.s0 log-price spread must lie in (-pi/2, pi/2) for the arctan market")
    elif block.type in (ModelType.FERNHOLZ, ModelType.CONDITIONED) or kind is ExperimentKind.CPS:
        if 0.0 < block.delta < 1.0 and s0.max() / s0.sum() >= 1.0 - block.delta:
            found.append("model.s0 must lie in O(δ): its largest weight must be below 1 - delta")
    return found


def _cps_violations(config: ExperimentConfig) -> List[str]:
    found = []
    block, cps = config.model, config.cps
    if block.type not in REGION_MODELS:
        found.append("cps experiments need a model that stays in O(δ): fernholz, arctan or conditioned")
    if block.type is ModelType.ARCTAN and block.delta >= ARCTAN_DELTA_BOUND:
        found.append(f"the arctan market stays in O(δ) only for delta < {ARCTAN_DELTA_BOUND:.4f}, got {block.delta:g}")
    if cps.max_branching is not None and cps.max_branching < cps.branching:
        found.append("cps.max_branching must be at least cps.branching")
    return found


def bessel_bounds(sigma: np.ndarray):
    """(d, c, C) for the covariance sigma sigma^T."""
    eigenvalues = np.linalg.eigvalsh(sigma @ sigma.T)
    return sigma.shape[0], float(eigenvalues.min()), float(eigenvalues.max())


def _bessel_violations(config: ExperimentConfig) -> List[str]:
    bessel = config.bessel
    rows = bessel.sigma if bessel.sigma is not None else np.eye(2).tolist()
    found = _matrix_violations("bessel.sigma", rows)
    if found:
        return found
    sigma = np.array(rows, dtype=float)
    if sigma.shape[0] != sigma.shape[1]:
        return ["bessel.sigma must be square"]
    d, c, C = bessel_bounds(sigma)
    if c <= 1e-12 * max(C, 1.0):
        return ["bessel.sigma must be nonsingular (c > 0)"]
    required = BesqParams.required_dimension(d, c, C)
    if bessel.strict and bessel.delta_B is not None and bessel.delta_B < required * (1.0 - 1e-12):
        found.append(f"delta_B < dC/c = {required:g} (delta_B = {bessel.delta_B:g})")
    return found


def _cfs_violations(config: ExperimentConfig) -> List[str]:
    found = []
    t_index = config.cfs.t_index if config.cfs.t_index is not None else config.grid.N // 2
    if t_index >= config.grid.N:
        found.append(f"cfs.t_index must be below N = {config.grid.N}, got {t_index}")
    n = model_dimension(config.model)
    if config.cfs.endpoints is not None and n is not None:
        found.extend(_matrix_violations("cfs.endpoints", config.cfs.endpoints))
        if any(len(row) != n for row in config.cfs.endpoints):
            found.append(f"cfs.endpoints rows must have {n} entries")
    return found


def validate(config: ExperimentConfig) -> List[str]:
    """Sweep every precondition of the experiment without simulating; returns all violations."""
    kind = config.kind
    if kind is ExperimentKind.BESSEL:
        return _bessel_violations(config)
    if config.model is None:
        return [f"a [model] section is required for {kind.value} experiments"]

    found = _model_violations(config.model, kind)
    if kind is ExperimentKind.CONDITIONED and config.model.type is not ModelType.CONDITIONED:
        found.append("conditioned experiments need model.type = conditioned")
    if kind is ExperimentKind.CPS:
        found.extend(_cps_violations(config))
    if kind is ExperimentKind.CFS_PROBE:
        found.extend(_cfs_violations(config))
    return found


# Models and frames

def build_market(block: ModelBlock):
    """Instantiate the scenario model named by the [model] section."""
    if block.type is ModelType.ARCTAN:
        return ArctanModel()
    n = model_dimension(block)
    vol = VolatilitySpec.constant(np.array(block.sigma, dtype=float))
    if block.type is ModelType.FERNHOLZ:
        params = FernholzParams(np.array(block.g), block.delta, block.M if block.M is not None else vol.M_hi)
        return fernholz_model(params, vol, block.gamma_cap, block.delta_guard)
    if block.type is ModelType.CONDITIONED:
        return ConditionedSampler(vol, DiversityRegion(block.delta, n), block.max_attempts)
    drift = DriftSpec.constant(block.drift) if block.drift is not None else DriftSpec.zero(n)
    return DiffusionModel(drift, vol, name=ModelType.CUSTOM.value)


def initial_prices(block: ModelBlock) -> np.ndarray:
    if block.s0 is not None:
        return np.array(block.s0, dtype=float)
    return np.ones(model_dimension(block))


def long_frame(path_ids: Sequence[str], times: np.ndarray, series: Dict[str, np.ndarray]) -> pd.DataFrame:
    """Rows (path_id, t, series, value) for arrays of shape (paths, times)."""
    frames = []
    for name, values in series.items():
        values = np.atleast_2d(values)
        frames.append(
            pd.DataFrame(
                {
                    "path_id": np.repeat(np.asarray(path_ids, dtype=object), values.shape[1]),
                    "t": np.tile(times, values.shape[0]),
                    "series": name,
                    "value": values.ravel(),
                }
            )
        )
    if not frames:
        return pd.DataFrame(columns=RESULT_COLUMNS)
    return pd.concat(frames, ignore_index=True)[RESULT_COLUMNS]


def _price_series(values: np.ndarray, label: str = "S") -> Dict[str, np.ndarray]:
    return {f"{label}_{i + 1}": values[..., i] for i in range(values.shape[-1])}


def _plain(value: Any) -> Any:
    """Convert report dictionaries to JSON-ready values; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


@dataclass
class ExperimentOutput:
    summary: BaseSummary
    frame: pd.DataFrame
    certificate: Optional[Certificate] = None


@dataclass
class RunResult:
    """Outcome of :func:`run`: exit code, written artifacts and the error document, if any."""

    exit_code: int
    out_dir: Path
    artifacts: List[Path] = field(default_factory=list)
    summary: Optional[Dict[str, Any]] = None
    error: Optional[Dict[str, Any]] = None


# Experiments

def _base(config: ExperimentConfig, seed: int, n_paths: Optional[int] = None) -> Dict[str, Any]:
    return {
        "kind": config.kind,
        "name": config.experiment.name,
        "seed": seed,
        "model": config.model.type.value if config.model is not None else None,
        "horizon": config.grid.T,
        "steps": config.grid.N,
        "n_paths": config.monte_carlo.paths if n_paths is None else n_paths,
    }


def _simulate(config: ExperimentConfig, seed: int, rng: RngStream) -> ExperimentOutput:
    grid = TimeGrid(config.grid.T, config.grid.N)
    market = build_market(config.model)
    ensemble = market.simulate_ensemble(grid, initial_prices(config.model), rng, config.monte_carlo.paths)
    top = ensemble.max_weights()
    keep = min(config.output.csv_paths, len(ensemble))
    series = _price_series(ensemble.values[:keep])
    series["mu_max"] = top[:keep]
    summary = SimulateSummary(
        **_base(config, seed),
        terminal_mean=ensemble.values[:, -1].mean(axis=0).tolist(),
        max_weight_sup=float(top.max()),
        notes=[GRID_ONLY_NOTE] if isinstance(market, ConditionedSampler) else [],
    )
    return ExperimentOutput(summary, long_frame([str(p) for p in range(keep)], grid.times, series))


def _diversity(config: ExperimentConfig, seed: int, rng: RngStream) -> ExperimentOutput:
    grid = TimeGrid(config.grid.T, config.grid.N)
    market = build_market(config.model)
    ensemble = market.simulate_ensemble(grid, initial_prices(config.model), rng, config.monte_carlo.paths)
    pi, rho = PortfolioSpec.equal_weight(ensemble.n_assets), PortfolioSpec.market()
    verdicts = diversity_summary(ensemble, config.model.delta)
    performance = relative_performance(ensemble, pi, rho)

    keep = min(config.output.csv_paths, len(ensemble))
    series: Dict[str, np.ndarray] = {}
    if keep:
        head = PathEnsemble(grid, ensemble.values[:keep])
        series["mu_max"] = head.max_weights()
        series["log_relative_value"] = np.log(portfolio_values(head, pi, 1.0) / portfolio_values(head, rho, 1.0))
    summary = DiversityResult(
        **_base(config, seed),
        diversity=_plain(verdicts.to_dict()),
        relative_performance=_plain(performance.to_dict()),
    )
    return ExperimentOutput(summary, long_frame([str(p) for p in range(keep)], grid.times, series))


def _conditioned(config: ExperimentConfig, seed: int, rng: RngStream) -> ExperimentOutput:
    grid = TimeGrid(config.grid.T, config.grid.N)
    sampler = build_market(config.model)
    s0 = initial_prices(config.model)
    paths = config.monte_carlo.paths
    acceptance = acceptance_rate(sampler, grid, s0, paths, rng.substream(0))
    ensemble = sample_conditioned_ensemble(sampler, grid, s0, rng.substream(1), paths)
    keep = min(config.output.csv_paths, paths)
    series = _price_series(ensemble.values[:keep])
    series["mu_max"] = ensemble.max_weights()[:keep]
    summary = ConditionedSummary(
        **_base(config, seed),
        acceptance=_plain(acceptance.to_dict()),
        diversity=_plain(diversity_summary(ensemble, config.model.delta).to_dict()),
        notes=[GRID_ONLY_NOTE],
    )
    return ExperimentOutput(summary, long_frame([str(p) for p in range(keep)], grid.times, series))


def _cps(config: ExperimentConfig, seed: int, rng: RngStream) -> ExperimentOutput:
    grid = TimeGrid(config.grid.T, config.grid.N)
    market = build_market(config.model)
    s0 = initial_prices(config.model)
    cps = config.cps
    region = DiversityRegion(config.model.delta, s0.size)
    crossing = cps.crossing.value
    notes: List[str] = []

    if cps.mode is CpsMode.TREE:
        tree = build_scenario_tree(
            market, s0, cps.eta, region, grid, cps.depth, cps.branching, rng.substream(0), crossing, cps.max_branching
        )
        tree = martingale_tilt(tree, cps.retirement_mass_floor, cps.budget_n)
        shadows = shadow_price(tree)
        certificate = cps_certificate(tree, cps.eta, shadows=shadows, crossing=crossing, raise_on_failure=False)
        internal = tree.internal_nodes()
        leaves = [node for node in tree.nodes.values() if node.is_leaf]
        relaxed = sum(int(node.tilt.budget_relaxed) for node in internal)
        tree_info = {
            "n_nodes": len(tree.nodes),
            "n_internal": len(internal),
            "n_leaves": len(leaves),
            "n_retired": sum(int(node.retired) for node in tree.nodes.values()),
            "max_children": max((len(node.children) for node in internal), default=0),
            "relaxed_nodes": relaxed,
            "max_martingale_residual": shadows.max_martingale_residual,
            "max_tube_slack": shadows.max_tube_slack,
        }
        if relaxed:
            notes.append(f"second-moment budget relaxed at {relaxed} nodes")
        frame = pd.concat(
            [
                long_frame(
                    [node.node_id],
                    np.array([node.time]),
                    {
                        **_price_series(node.state[None, None, :], "pivot"),
                        **_price_series(shadows.values[node.node_id][None, None, :], "shadow"),
                    },
                )
                for node in tree.nodes.values()
            ],
            ignore_index=True,
        )
        n_paths = len(leaves)
    else:
        ensemble = market.simulate_ensemble(grid, s0, rng.substream(0), config.monte_carlo.paths)
        certificate = cps_certificate(ensemble, cps.eta, region, crossing=crossing, raise_on_failure=False)
        keep = min(config.output.csv_paths, len(ensemble))
        frame = long_frame([str(p) for p in range(keep)], grid.times, _price_series(ensemble.values[:keep]))
        tree_info = None
        n_paths = len(ensemble)

    probe = None
    if cps.probe_samples:
        eps = epsilon_on_knots([0.0], s0[None, :], cps.eta, region)
        report = increment_support_probe(
            market, s0, float(eps.values[0]), eps.lipschitz_constant, cps.probe_samples,
            rng.substream(1), grid, 0.0, cps.eta, region,
        )
        probe = _plain(report.to_dict())

    summary = CpsSummary(
        **_base(config, seed, n_paths),
        certificate=_plain(certificate.summary()),
        tree=_plain(tree_info),
        probe=probe,
        notes=notes,
    )
    return ExperimentOutput(summary, frame, certificate)


def _bessel(config: ExperimentConfig, seed: int, rng: RngStream) -> ExperimentOutput:
    grid = TimeGrid(config.grid.T, config.grid.N)
    block = config.bessel
    model = MartingaleModel(np.array(block.sigma, dtype=float) if block.sigma is not None else np.eye(2))
    c, C = model.bounds
    required = BesqParams.required_dimension(model.d, c, C)
    dimension = required if block.delta_B is None else block.delta_B
    params = BesqParams(dimension, grid.horizon)
    paths = config.monte_carlo.paths

    comparison = coupled_comparison_ensemble(model, grid, params, rng.substream(0), paths, block.strict, block.tolerance)
    support = support_probability_curve(model, grid, block.eps_levels, paths, rng.substream(1), dimension)
    besq = besq_ensemble(params, grid, rng.substream(2), paths)
    marginals = []
    for fraction in BESQ_MARGINAL_FRACTIONS:
        k = grid.index_at_or_after(fraction * grid.horizon)
        t = grid.time(k)
        estimate = mean_estimate(besq[:, k])
        marginals.append(
            {
                "t": t,
                "expected": dimension * t,
                "estimate": estimate.to_dict(),
                "z": abs(estimate.estimate - dimension * t) / estimate.standard_error if paths > 1 else None,
            }
        )

    keep = min(config.output.csv_paths, paths)
    radius, coupled = [], []
    for p in range(keep):
        decomp = radial_decompose(model.simulate(grid, rng.substream(0).substream(p)), grid, model.covariance, c, C)
        radius.append(decomp.R)
        coupled.append(coupled_besq(decomp, dimension))
    series = {"R": np.array(radius), "Z_coupled": np.array(coupled)} if keep else {}

    notes = []
    if dimension < required * (1.0 - 1e-12):
        notes.append(f"delta_B is below dC/c = {required:g}: domination is not guaranteed")
    if model.d > 1:
        notes.append("support estimates are grid-only in more than one dimension")
    summary = BesselSummary(
        **{**_base(config, seed), "model": None},
        comparison=_plain(comparison.to_dict()),
        support=[_plain(report.to_dict()) for report in support],
        besq_marginals=_plain(marginals),
        notes=notes,
    )
    return ExperimentOutput(summary, long_frame([str(p) for p in range(keep)], grid.times, series))


def _cfs(config: ExperimentConfig, seed: int, rng: RngStream) -> ExperimentOutput:
    grid = TimeGrid(config.grid.T, config.grid.N)
    market = build_market(config.model)
    cfs = config.cfs
    t_index = cfs.t_index if cfs.t_index is not None else grid.steps // 2
    prefix = market.simulate(grid, initial_prices(config.model), rng.substream(0)).values
    paths = config.monte_carlo.paths

    if cfs.endpoints is not None:
        reports = cfs_family(market, grid, prefix, t_index, cfs.endpoints, cfs.eta_tube, paths, rng.substream(1))
        targets = [ramp_target(prefix[t_index], end, grid, t_index) for end in np.atleast_2d(cfs.endpoints)]
    else:
        target = frozen_target(prefix[t_index], grid, t_index)
        reports = [cfs_probe(market, grid, prefix, t_index, target, cfs.eta_tube, paths, rng.substream(1))]
        targets = [target]

    frames = [long_frame(["prefix"], grid.times, _price_series(prefix[None]))]
    for j, target in enumerate(targets):
        frames.append(long_frame([f"target-{j}"], grid.times[t_index:], _price_series(target[None])))
    notes = [GRID_ONLY_NOTE] if isinstance(market, ConditionedSampler) else []
    summary = CfsSummary(
        **_base(config, seed),
        t_index=t_index,
        probes=[dict(_plain(report.to_dict()), target=j) for j, report in enumerate(reports)],
        notes=notes,
    )
    return ExperimentOutput(summary, pd.concat(frames, ignore_index=True))


EXPERIMENTS: Dict[ExperimentKind, Callable[[ExperimentConfig, int, RngStream], ExperimentOutput]] = {
    ExperimentKind.SIMULATE: _simulate,
    ExperimentKind.DIVERSITY: _diversity,
    ExperimentKind.CONDITIONED: _conditioned,
    ExperimentKind.CPS: _cps,
    ExperimentKind.BESSEL: _bessel,
    ExperimentKind.CFS_PROBE: _cfs,
}


# Artifacts

def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def remove_artifacts(out_dir: Path) -> None:
    for name in ARTIFACTS:
        with contextlib.suppress(FileNotFoundError):
            (out_dir / name).unlink()


def write_artifacts(out_dir: Path, config: ExperimentConfig, output: ExperimentOutput) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    formats = set(config.output.formats)
    written: List[Path] = []
    try:
        if "csv" in formats:
            path = out_dir / RESULTS_FILE
            atomic_write(path, output.frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
            written.append(path)
        if "json" in formats:
            path = out_dir / SUMMARY_FILE
            document = output.summary.model_dump(mode="json")
            atomic_write(path, json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
            written.append(path)
        if "txt" in formats and output.certificate is not None:
            path = out_dir / CERTIFICATE_FILE
            atomic_write(path, output.certificate.dumps())
            written.append(path)
    except BaseException:
        for path in written:
            with contextlib.suppress(FileNotFoundError):
                path.unlink()
        raise
    return written


def resolve_seed(config: ExperimentConfig, seed: Optional[int], settings: Config) -> int:
    if seed is not None:
        return int(seed)
    if config.monte_carlo.seed is not None:
        return int(config.monte_carlo.seed)
    return settings.default_seed


def run(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    settings: Optional[Config] = None,
) -> RunResult:
    """Validate, run the experiment and write its artifacts.

    Exit codes: 0 ok, 1 other library error, 2 validation, 3 numerical
    divergence, 4 certificate failed. Artifacts left in the output directory
    by an earlier run are removed on exits 1, 2 and 3; exit 4 keeps the new
    ones for inspection.
    """
    settings = settings or Config()
    seed = resolve_seed(config, seed, settings)
    out = Path(out_dir or config.output.directory or settings.output_dir)

    violations = validate(config)
    if not 0 <= seed < 2**64:
        violations.append(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    if violations:
        error = ConfigValidationError(violations)
        remove_artifacts(out)
        logger.error("Experiment rejected", extra={"extra_fields": {"violations": violations}})
        return RunResult(EXIT_VALIDATION, out, error=error.to_dict())

    logger.info(
        "Experiment started",
        extra={"extra_fields": {"kind": config.kind.value, "seed": seed, "out_dir": str(out)}},
    )
    try:
        output = EXPERIMENTS[config.kind](config, seed, RngStream(seed))
    except SimulationDivergedError as exc:
        remove_artifacts(out)
        logger.error("Simulation diverged", extra={"extra_fields": exc.to_dict()})
        return RunResult(EXIT_DIVERGED, out, error=exc.to_dict())
    except ShadowPriceError as exc:
        remove_artifacts(out)
        logger.error("Experiment failed", extra={"extra_fields": exc.to_dict()})
        return RunResult(EXIT_ERROR, out, error=exc.to_dict())

    artifacts = write_artifacts(out, config, output)
    summary = output.summary.model_dump(mode="json")
    certificate = output.certificate
    if certificate is not None and certificate.status != "certified":
        error = CertificateFailedError(
            certificate.failed_node, f"certificate failed at node {certificate.failed_node}"
        )
        return RunResult(EXIT_CERTIFICATE, out, artifacts, summary, error.to_dict())

    logger.info(
        "Experiment finished",
        extra={"extra_fields": {"kind": config.kind.value, "artifacts": [p.name for p in artifacts]}},
    )
    return RunResult(EXIT_OK, out, artifacts, summary)

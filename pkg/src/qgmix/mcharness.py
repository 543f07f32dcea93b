"""Monte Carlo replication engine and summary metrics.

Every replication ``r`` of a scenario draws its data from the stream keyed by
``(base_seed, scenario id, r)``; each method gets its own child stream of the
same key, so results do not depend on execution order, on worker count, or on
which other methods are run.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import simgen
from .qgc import Z_CRIT, ModelSpec, qgcomp
from .regress import RegressionError
from .simgen import ScenarioSpec, generate_dataset
from .streams import seed_sequence, stream
from .wqs import WqsConfig, wqs_fit

METHODS = ("qgcomp", "wqs", "wqs_nosplit")
_METHOD_STREAM = {"qgcomp": 1, "wqs": 2, "wqs_nosplit": 3}
_DATA_STREAM = 0


@dataclass(frozen=True)
class HarnessConfig:
    qgcomp_bootstrap: int = 200
    wqs_bootstrap: int = 100
    train_fraction: float = 0.4
    extra_components: tuple = ()


@dataclass
class ReplicationResult:
    scenario: int
    variant: str
    method: str
    d: int
    n: int
    rep: int
    component: str
    truth: float
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    reject: bool
    failed: bool = False
    error: str = ""

    @classmethod
    def failure(cls, key: dict, component: str, truth: float, error: str) -> "ReplicationResult":
        nan = float("nan")
        return cls(**key, component=component, truth=truth, estimate=nan, se=nan,
                   ci_lower=nan, ci_upper=nan, reject=False, failed=True, error=error)


RESULT_COLUMNS = tuple(f.name for f in fields(ReplicationResult))


@dataclass
class SummaryRow:
    scenario: int
    variant: str
    method: str
    d: int
    n: int
    component: str
    truth: float
    bias: float
    mcse: float
    rmvar: float
    coverage: float
    power: float
    miss_below: float
    miss_above: float
    mean_ci_width: float
    n_success: int
    n_failed: int


SUMMARY_COLUMNS = tuple(f.name for f in fields(SummaryRow))


# Fields that always appear in the variant label of a scenario's cells.
_LABEL_FIELDS = {5: ("beta2", "rho_x1x2")}


def variant_label(spec: ScenarioSpec) -> str:
    """Compact description of the swept fields and any that differ from the preset."""
    base = simgen.scenario(spec.id)
    always = _LABEL_FIELDS.get(spec.id, ())
    parts = []
    for name in ("beta1", "beta2", "beta_11", "beta_12", "beta_C", "rho_x1x2", "rho_xC", "q"):
        value = getattr(spec, name)
        if name in always or value != getattr(base, name):
            parts.append(f"{name}={value:g}")
    return ";".join(parts)


def model_spec_for(spec: ScenarioSpec) -> ModelSpec:
    return ModelSpec(products=spec.products, msm_degree=2 if spec.nonlinear else 1, q=spec.q)


def _component_names(degree: int) -> list[str]:
    return [f"psi{k + 1}" for k in range(degree)]


def _rows(key, components, truths, est, se):
    out = []
    for comp, truth, e, s in zip(components, truths, est, se):
        e, s = float(e), float(s)
        out.append(ReplicationResult(**key, component=comp, truth=float(truth), estimate=e, se=s,
                                     ci_lower=e - Z_CRIT * s, ci_upper=e + Z_CRIT * s,
                                     reject=bool(abs(e / s) > Z_CRIT) if s > 0 else bool(e != 0)))
    return out


def _run_method(method: str, spec: ScenarioSpec, ds, config: HarnessConfig, seed, key: dict):
    mspec = model_spec_for(spec)
    truths = list(ds.truth[: mspec.msm_degree])
    components = _component_names(mspec.msm_degree)
    try:
        if method == "qgcomp":
            est = qgcomp(ds.exposures, ds.outcome, mspec, B=config.qgcomp_bootstrap, seed=seed)
            rows = _rows(key, components, truths, est.psi, est.se)
            if "beta1" in config.extra_components:
                fit = est.underlying_fit
                rows += _rows(key, ["beta1"], [spec.betas[0]], [fit.beta[1]], [fit.se[1]])
            return rows
        if method in ("wqs", "wqs_nosplit"):
            cfg = WqsConfig(train_fraction=0.0 if method == "wqs_nosplit" else config.train_fraction,
                            n_bootstrap=config.wqs_bootstrap, quadratic_index=spec.nonlinear,
                            q=spec.q, seed=seed)
            est = wqs_fit(ds.exposures, ds.outcome, config=cfg)
            return _rows(key, components, truths, est.psi, est.se)
    except (RegressionError, np.linalg.LinAlgError) as exc:
        return [ReplicationResult.failure(key, c, t, str(exc)) for c, t in zip(components, truths)]
    raise ValueError(f"unknown method {method!r}")


def replication_seed(base_seed: int, scenario_id: int, rep: int):
    return seed_sequence(base_seed, scenario_id, rep)


def run_one(spec: ScenarioSpec, methods: Sequence[str], rep: int, base_seed: int,
            config: HarnessConfig = HarnessConfig()) -> tuple[list[ReplicationResult], dict]:
    """One replication: generate a dataset and run every method on it."""
    root = replication_seed(base_seed, spec.id, rep)
    ds = generate_dataset(spec, stream(root, _DATA_STREAM))
    key = dict(scenario=spec.id, variant=variant_label(spec), d=spec.d, n=spec.n, rep=rep)
    rows = []
    for method in methods:
        rows += _run_method(method, spec, ds, config, seed_sequence(root, _METHOD_STREAM[method]),
                            {**key, "method": method})
    return rows, ds.realized_correlations()


def _run_chunk(args):
    spec, methods, reps, base_seed, config = args
    return [(r, *run_one(spec, methods, r, base_seed, config)) for r in reps]


def _order(rows: list[ReplicationResult], methods: Sequence[str]) -> list[ReplicationResult]:
    rank = {m: i for i, m in enumerate(methods)}
    return sorted(rows, key=lambda r: (rank[r.method], r.rep, r.component))


def run_replications(spec: ScenarioSpec, methods: Sequence[str], R: int, base_seed: int,
                     config: HarnessConfig = HarnessConfig(), workers: int = 1,
                     return_correlations: bool = False):
    """Run ``R`` replications of one scenario cell.

    Rows are ordered by (method, replication, component) regardless of how
    the work was scheduled.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    reps = list(range(1, R + 1))
    if workers > 1:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [(spec, tuple(methods), c, base_seed, config) for c in chunks]))
        outputs = sorted((o for part in parts for o in part), key=lambda o: o[0])
    else:
        outputs = _run_chunk((spec, tuple(methods), reps, base_seed, config))
    rows = _order([row for _, out, _ in outputs for row in out], methods)
    if not return_correlations:
        return rows
    corrs = [c for _, _, c in outputs]
    mean_corr = {k: float(np.nanmean([c[k] for c in corrs])) for k in corrs[0]}
    return rows, mean_corr


def summarize_metrics(results: Iterable[ReplicationResult], truth: float | None = None) -> SummaryRow:
    """Bias, MCSE, RMVAR, coverage and rejection rate for one (cell, method, component)."""
    results = list(results)
    if not results:
        raise ValueError("no results to summarize")
    ok = [r for r in results if not r.failed]
    n_failed = len(results) - len(ok)
    if len(ok) < 2:
        raise ValueError(f"need at least 2 successful replications, got {len(ok)} ({n_failed} failed)")
    first = results[0]
    if truth is None:
        truth = first.truth
    est = np.array([r.estimate for r in ok])
    se = np.array([r.se for r in ok])
    lo = np.array([r.ci_lower for r in ok])
    hi = np.array([r.ci_upper for r in ok])
    below = float(np.mean(hi < truth))
    above = float(np.mean(lo > truth))
    return SummaryRow(
        scenario=first.scenario, variant=first.variant, method=first.method, d=first.d, n=first.n,
        component=first.component, truth=float(truth),
        bias=float(est.mean() - truth),
        mcse=float(est.std(ddof=1)),
        rmvar=float(math.sqrt(np.mean(se ** 2))),
        coverage=float(np.mean((lo <= truth) & (truth <= hi))),
        power=float(np.mean([r.reject for r in ok])),
        miss_below=below, miss_above=above,
        mean_ci_width=float(np.mean(hi - lo)),
        n_success=len(ok), n_failed=n_failed,
    )


def cell_key(r) -> tuple:
    return (r.scenario, r.variant, r.method, r.d, r.n, r.component)


def summarize(results: Iterable[ReplicationResult]) -> list[SummaryRow]:
    """One summary row per (scenario, variant, method, d, n, component), in first-seen order."""
    groups: dict[tuple, list] = {}
    for r in results:
        groups.setdefault(cell_key(r), []).append(r)
    return [summarize_metrics(rows) for rows in groups.values()]


def as_dicts(rows) -> list[dict]:
    return [asdict(r) for r in rows]

"""Command-line interface: ``qgmix simulate | fit | report``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, mcharness, simgen
from .qgc import ModelSpec, qgcomp
from .regress import RegressionError
from .wqs import WqsConfig, wqs_fit

log = logging.getLogger("qgmix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "QGMIX_OUT"
DEFAULT_OUT = "qgmix-results"

REPLICATIONS_FILE = "replications.csv"
FIGURE_FILE = "figure_data.csv"
METADATA_FILE = "run_metadata.json"
FIGURE_COLUMNS = ("scenario", "variant", "method", "d", "n", "rep", "component",
                  "truth", "estimate", "bias", "ci_width")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- io helpers

def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def to_markdown(rows: list[dict], columns, digits: int = 3) -> str:
    def fmt(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.{digits}f}"
        return str(v)

    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join(fmt(row[c]) for c in columns) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def render_table(rows: list[dict], columns, fmt: str) -> str:
    return to_markdown(rows, columns) if fmt == "markdown" else to_csv(rows, columns)


def read_replications(path: Path) -> list[mcharness.ReplicationResult]:
    casts = {"scenario": int, "d": int, "n": int, "rep": int, "truth": float, "estimate": float,
             "se": float, "ci_lower": float, "ci_upper": float,
             "reject": lambda s: s == "1", "failed": lambda s: s == "1"}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(mcharness.RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                kw = {c: casts.get(c, str)(rec[c]) for c in mcharness.RESULT_COLUMNS}
            except ValueError as exc:
                raise DataError(f"{path}, line {lineno}: {exc}") from exc
            rows.append(mcharness.ReplicationResult(**kw))
    return rows


def read_table(path: Path, columns: list[str]) -> dict[str, np.ndarray]:
    """Read the named numeric columns of a comma-separated file with a header row."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: columns not found: {missing}")
        pos = [header.index(c) for c in columns]
        data = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(rec)}")
            row = []
            for c, k in zip(columns, pos):
                try:
                    v = float(rec[k])
                except ValueError:
                    raise DataError(f"{path}, line {lineno}, column {c!r}: "
                                    f"cannot parse {rec[k]!r} as a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}, line {lineno}, column {c!r}: non-finite value")
                row.append(v)
            data.append(row)
    if not data:
        raise DataError(f"{path}: no data rows")
    arr = np.array(data)
    return {c: arr[:, i] for i, c in enumerate(columns)}


# ---------------------------------------------------------------- config

def _list(value, cast=str):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [cast(value)]
    return [cast(v.strip()) for v in str(value).split(",") if v.strip()]


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """Flags win over the config file, which wins over defaults."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - set(defaults) - {"out"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    merged = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        merged[key] = flag if flag is not None else cfg.get(key, default)
    out = getattr(args, "out", None) or os.environ.get(OUT_ENV) or cfg.get("out") or DEFAULT_OUT
    merged["out"] = Path(out)
    return merged


# ---------------------------------------------------------------- simulate

SIM_DEFAULTS = dict(scenario=None, n=[500], d=[4], q=4, reps=1000, seed=42,
                    methods=["qgcomp", "wqs"], train_fraction=0.4, bootstraps=None,
                    beta1=None, beta2=None, rho=None, emit_figure_data=False,
                    format="csv", workers=1)


def _scenario_cells(cfg: dict) -> list[simgen.ScenarioSpec]:
    sid = cfg["scenario"]
    if sid is None:
        raise UsageError("simulate requires --scenario")
    try:
        sid = int(sid)
        simgen.scenario(sid)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ns = _list(cfg["n"], int)
    ds = _list(cfg["d"], int)
    beta1 = _list(cfg["beta1"], float) or [None]
    beta2 = _list(cfg["beta2"], float)
    rho = _list(cfg["rho"], float)
    if sid == 5:
        beta2 = beta2 or list(simgen.SCENARIO5_BETA2)
        rho = rho if rho is not None else list(simgen.SCENARIO5_RHO)
    rho_field = "rho_xC" if sid == 6 else "rho_x1x2"
    cells = []
    for b1, b2, r, n, d in itertools.product(beta1, beta2 or [None], rho or [None], ns, ds):
        kw = dict(n=n, d=d, q=int(cfg["q"]))
        if b1 is not None:
            kw["beta1"] = b1
        if b2 is not None:
            kw["beta2"] = b2
        if r is not None:
            kw[rho_field] = r
        try:
            cells.append(simgen.scenario(sid, **kw))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return cells


def figure_rows(results) -> list[dict]:
    out = []
    for r in results:
        if r.failed:
            continue
        out.append(dict(scenario=r.scenario, variant=r.variant, method=r.method, d=r.d, n=r.n, rep=r.rep,
                        component=r.component, truth=r.truth, estimate=r.estimate,
                        bias=r.estimate - r.truth, ci_width=r.ci_upper - r.ci_lower))
    return out


def summary_text(results, fmt: str) -> str:
    summary = mcharness.summarize(results)
    return render_table(mcharness.as_dicts(summary), mcharness.SUMMARY_COLUMNS, fmt)


def run_simulate(args) -> int:
    cfg = _merge(args, SIM_DEFAULTS)
    cells = _scenario_cells(cfg)
    methods = _list(cfg["methods"])
    bad = [m for m in methods if m not in mcharness.METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {list(mcharness.METHODS)}")
    if cfg["format"] not in ("csv", "markdown"):
        raise UsageError("--format must be csv or markdown")
    reps, seed = int(cfg["reps"]), int(cfg["seed"])
    if reps < 2:
        raise UsageError("--reps must be at least 2")
    boot = cfg["bootstraps"]
    hconf = mcharness.HarnessConfig(
        qgcomp_bootstrap=int(boot) if boot else 200,
        wqs_bootstrap=int(boot) if boot else 100,
        train_fraction=float(cfg["train_fraction"]),
        extra_components=("beta1",) if cfg["emit_figure_data"] else (),
    )

    results, cell_meta = [], []
    for spec in cells:
        log.info("scenario %d %s n=%d d=%d: %d replications", spec.id, mcharness.variant_label(spec) or "-",
                 spec.n, spec.d, reps)
        rows, corr = mcharness.run_replications(spec, methods, reps, seed, hconf,
                                                workers=int(cfg["workers"]), return_correlations=True)
        results += rows
        cell_meta.append(dict(scenario=spec.id, variant=mcharness.variant_label(spec), n=spec.n, d=spec.d,
                              q=spec.q, truth=list(spec.truth), copy_prob_x1x2=spec.copy_prob_x1x2,
                              copy_prob_xC=spec.copy_prob_xC, realized_correlation=corr,
                              failed_replications=sum(1 for r in rows if r.failed)))

    out: Path = cfg["out"]
    ext = "md" if cfg["format"] == "markdown" else "csv"
    write_atomic(out / REPLICATIONS_FILE, to_csv(mcharness.as_dicts(results), mcharness.RESULT_COLUMNS))
    write_atomic(out / f"summary.{ext}", summary_text(results, cfg["format"]))
    if cfg["emit_figure_data"]:
        write_atomic(out / FIGURE_FILE, to_csv(figure_rows(results), FIGURE_COLUMNS))
    meta = dict(version=__version__, command="simulate", seed=seed, reps=reps, methods=methods,
                qgcomp_bootstrap=hconf.qgcomp_bootstrap, wqs_bootstrap=hconf.wqs_bootstrap,
                train_fraction=hconf.train_fraction, critical_value=1.96, cells=cell_meta)
    write_atomic(out / METADATA_FILE, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(summary_text(results, "markdown"), end="")
    return EXIT_OK


# ---------------------------------------------------------------- report

REPORT_DEFAULTS = dict(results=None, format="csv")


def run_report(args) -> int:
    cfg = _merge(args, REPORT_DEFAULTS)
    src = cfg["results"]
    if not src:
        raise UsageError("report requires --results")
    src = Path(src)
    if src.is_dir():
        src = src / REPLICATIONS_FILE
    if not src.exists():
        raise DataError(f"results file not found: {src}")
    results = read_replications(src)
    ext = "md" if cfg["format"] == "markdown" else "csv"
    write_atomic(cfg["out"] / f"summary.{ext}", summary_text(results, cfg["format"]))
    print(summary_text(results, "markdown"), end="")
    return EXIT_OK


# ---------------------------------------------------------------- fit

FIT_DEFAULTS = dict(data=None, outcome=None, exposures=None, covariates=None, link="identity",
                    methods=["qgcomp", "wqs"], q=4, msm_degree=1, products=None, bootstraps=None,
                    train_fraction=0.4, quadratic_index=False, direction="positive", seed=42,
                    format="csv")


def _parse_products(spec, names) -> tuple:
    pairs = []
    for term in _list(spec) or []:
        parts = [p.strip() for p in term.split(":")]
        if len(parts) != 2 or any(p not in names for p in parts):
            raise UsageError(f"product term {term!r} must be 'a:b' with a and b among the exposures")
        pairs.append((names.index(parts[0]), names.index(parts[1])))
    return tuple(pairs)


def _constant_columns(X, names):
    return [names[j] for j in range(X.shape[1]) if np.ptp(X[:, j]) == 0]


def run_fit(args) -> int:
    cfg = _merge(args, FIT_DEFAULTS)
    if not cfg["data"] or not cfg["outcome"] or not cfg["exposures"]:
        raise UsageError("fit requires --data, --outcome and --exposures")
    exposures = _list(cfg["exposures"])
    covariates = _list(cfg["covariates"]) or []
    methods = _list(cfg["methods"])
    bad = [m for m in methods if m not in ("qgcomp", "wqs")]
    if bad:
        raise UsageError(f"fit supports methods qgcomp and wqs, got {bad}")
    try:
        spec = ModelSpec(products=_parse_products(cfg["products"], exposures),
                         msm_degree=int(cfg["msm_degree"]), q=int(cfg["q"]), link=cfg["link"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    table = read_table(Path(cfg["data"]), [cfg["outcome"]] + exposures + covariates)
    y = table[cfg["outcome"]]
    X = np.column_stack([table[c] for c in exposures])
    Z = np.column_stack([table[c] for c in covariates]) if covariates else None
    if spec.link == "logit" and not np.all((y == 0) | (y == 1)):
        raise DataError(f"outcome {cfg['outcome']!r} must be binary 0/1 for the logit link")
    const = _constant_columns(X, exposures)
    if const:
        raise RegressionError(f"design is rank deficient: exposure column {const[0]!r} is constant")

    seed = int(cfg["seed"])
    report = dict(version=__version__, n=int(y.size), q=spec.q, outcome=cfg["outcome"],
                  exposures=exposures, covariates=covariates, seed=seed)
    rows = []
    if "qgcomp" in methods:
        est = qgcomp(X, y, spec, Z, B=int(cfg["bootstraps"] or 200), seed=seed,
                     exposure_names=exposures, covariate_names=covariates or None)
        report["cutpoints"] = {nm: list(map(float, c)) for nm, c in
                               zip(est.quantized.column_names, est.quantized.cutpoints)}
        report["qgcomp"] = dict(
            psi=est.psi.tolist(), se=est.se.tolist(), ci_lower=est.ci_lower.tolist(),
            ci_upper=est.ci_upper.tolist(), variance_method=est.variance_method, link=spec.link,
            msm_degree=spec.msm_degree, n_bootstrap=est.n_bootstrap,
            weights_positive=est.weights_positive, weights_negative=est.weights_negative,
            partial_effect_positive=est.partial_effect_positive,
            partial_effect_negative=est.partial_effect_negative,
            coefficients=dict(zip(est.underlying_fit.names, est.underlying_fit.beta.tolist())))
        for k in range(est.psi.size):
            rows.append(dict(method="qgcomp", component=f"psi{k + 1}", estimate=float(est.psi[k]),
                             se=float(est.se[k]), ci_lower=float(est.ci_lower[k]),
                             ci_upper=float(est.ci_upper[k])))
    if "wqs" in methods:
        if spec.link != "identity":
            raise UsageError("WQS is implemented for continuous outcomes only (link=identity)")
        wcfg = WqsConfig(train_fraction=float(cfg["train_fraction"]), n_bootstrap=int(cfg["bootstraps"] or 100),
                         direction=cfg["direction"], quadratic_index=bool(cfg["quadratic_index"]),
                         q=spec.q, seed=seed)
        w = wqs_fit(X, y, Z, wcfg, exposure_names=exposures)
        report["wqs"] = dict(psi=w.psi.tolist(), se=w.se.tolist(), t_statistic=w.t_statistic.tolist(),
                             ci_lower=w.ci_lower.tolist(), ci_upper=w.ci_upper.tolist(),
                             weights=dict(zip(exposures, w.weights.tolist())),
                             train_size=w.train_size, validation_size=w.validation_size,
                             n_bootstrap=wcfg.n_bootstrap, train_fraction=wcfg.train_fraction,
                             direction=wcfg.direction, uniform_fallbacks=w.uniform_fallbacks)
        for k in range(w.psi.size):
            rows.append(dict(method="wqs", component=f"psi{k + 1}", estimate=float(w.psi[k]),
                             se=float(w.se[k]), ci_lower=float(w.ci_lower[k]), ci_upper=float(w.ci_upper[k])))

    out: Path = cfg["out"]
    cols = ("method", "component", "estimate", "se", "ci_lower", "ci_upper")
    ext = "md" if cfg["format"] == "markdown" else "csv"
    write_atomic(out / "fit_report.json", json.dumps(report, indent=2) + "\n")
    write_atomic(out / f"fit_summary.{ext}", render_table(rows, cols, cfg["format"]))
    print(to_markdown(rows, cols, digits=4), end="")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qgmix", description="Mixture effects by quantile g-computation and WQS regression.")
    parser.add_argument("--version", action="version", version=f"qgmix {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a simulation scenario")
    sim.add_argument("--scenario", type=int)
    sim.add_argument("--n", help="sample size(s), comma separated")
    sim.add_argument("--d", help="number(s) of exposures, comma separated")
    sim.add_argument("--q", type=int)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--methods", help="comma separated: qgcomp, wqs, wqs_nosplit")
    sim.add_argument("--train-fraction", type=float)
    sim.add_argument("--bootstraps", type=int)
    sim.add_argument("--beta1", help="override beta1 (comma list sweeps)")
    sim.add_argument("--beta2", help="override beta2 (comma list sweeps)")
    sim.add_argument("--rho", help="exposure correlation target(s); X1-C for scenario 6")
    sim.add_argument("--emit-figure-data", action="store_true", default=None)
    sim.add_argument("--workers", type=int)

    fit = sub.add_parser("fit", help="fit estimators to a data file")
    fit.add_argument("--data")
    fit.add_argument("--outcome")
    fit.add_argument("--exposures", help="comma separated exposure columns")
    fit.add_argument("--covariates", help="comma separated covariate columns")
    fit.add_argument("--link", choices=("identity", "logit"))
    fit.add_argument("--methods")
    fit.add_argument("--q", type=int)
    fit.add_argument("--msm-degree", type=int)
    fit.add_argument("--products", help="exposure products, e.g. 'a:b,a:a'")
    fit.add_argument("--bootstraps", type=int)
    fit.add_argument("--train-fraction", type=float)
    fit.add_argument("--quadratic-index", action="store_true", default=None)
    fit.add_argument("--direction", choices=("positive", "negative"))
    fit.add_argument("--seed", type=int)

    rep = sub.add_parser("report", help="rebuild summary tables from a replications file")
    rep.add_argument("--results", help="replications.csv or the directory holding it")

    for p in (sim, fit, rep):
        p.add_argument("--out", help=f"output directory (env {OUT_ENV}; default {DEFAULT_OUT})")
        p.add_argument("--format", choices=("csv", "markdown"))
        p.add_argument("--config", help="JSON file of option values; flags take precedence")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"qgmix: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {"simulate": run_simulate, "fit": run_fit, "report": run_report}
    if args.command not in handlers:
        print("qgmix: usage error: choose a command: simulate, fit, report", file=sys.stderr)
        return EXIT_USAGE
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"qgmix: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RegressionError as exc:
        print(f"qgmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError) as exc:
        print(f"qgmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"qgmix: cannot write output: {exc}", file=sys.stderr)
        return EXIT_DATA

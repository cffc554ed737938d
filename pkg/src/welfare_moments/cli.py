"""Batch front end: dataset ingestion, the five subcommands, deterministic output.

Subcommands: ``simulate`` (draw households from a synthetic population),
``estimate`` (first stage plus share-moment fits), ``welfare`` (full
report sweep over price changes), ``rationality`` (verdicts over a
budget grid), and ``oracle-check`` (approximation-versus-exact error
table).  All outputs are deterministic given the configuration and seed;
errors are emitted as JSON on standard error with exit code 1 for
validation problems and 2 for numeric failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Budget, DomainError, OrderError, PriceChange
from .estimation import (
    BasisSpec,
    BootstrapInstabilityError,
    Dataset,
    DegenerateDataError,
    FitError,
    SingularDesignError,
    first_stage,
    fit_moment_surface,
    fitted_surface,
)
from .oracle import (
    CobbDouglasPopulation,
    L0,
    NumericError,
    Q0,
    demand_support,
    population_cv,
    surface_from_population,
)
from .rationality import (
    SimplexError,
    SupportBox,
    degree1_cone_test,
    lp_violation_search,
)
from .synthetic import cobb_douglas_cross_section, population_cross_section
from .welfare import (
    InternalConsistencyError,
    QuadratureRule,
    build_report,
    cv_first_order,
    cv_moment_local,
    cv_path,
    cv_ra,
)

VERSION = "0.1.0"


class SchemaError(ValueError):
    def __init__(self, column):
        self.column = column
        super().__init__("missing required column %r" % column)


class RowDataError(ValueError):
    def __init__(self, errors):
        self.errors = errors
        super().__init__("%d malformed data rows (first: line %d: %s)"
                         % (len(errors), errors[0][0], errors[0][1]))


@dataclass
class RunConfig:
    population: str = None
    data: str = None
    goods: list = field(default_factory=lambda: ["q"])
    good: str = None
    price_degree: int = 3
    income_degree: int = 3
    include_control: bool = True
    p0: float = 1.0
    y: float = 2.0
    dp: list = field(default_factory=lambda: [0.05])
    b_lo: float = None
    b_hi: float = None
    z: float = None
    k: float = None
    quad_nodes: int = 32
    degree: int = 1
    grid: int = None
    p_grid: list = field(default_factory=lambda: [1.0])
    y_grid: list = field(default_factory=lambda: [2.0])
    n: int = 1000
    seed: int = None
    bootstrap_reps: int = 0
    level: float = 0.90
    out: str = "."

    def canonical(self):
        payload = asdict(self)
        payload.pop("out", None)  # output routing does not affect results
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_population(name):
    name = name.strip()
    if name == "L0":
        return L0
    if name == "Q0":
        return Q0
    for prefix, maker in (("CD2(", CobbDouglasPopulation.two_type),
                          ("CD(", CobbDouglasPopulation.single)):
        if name.startswith(prefix) and name.endswith(")"):
            return maker(float(name[len(prefix):-1]))
    raise ValueError("unknown population %r (use L0, Q0, CD(a), CD2(a))" % name)


def ingest_csv(path, goods):
    """Parse and validate the household CSV; returns (Dataset, warnings).

    Required columns: w_<good> and log_p_<good> per modeled good, plus
    log_y and log_z.  Unparseable or out-of-range cells are collected as
    row-level errors (at most 100) before failing; extra columns are
    ignored with a warning.
    """
    goods = tuple(goods)
    required = ["w_%s" % g for g in goods] + ["log_p_%s" % g for g in goods]
    required += ["log_y", "log_z"]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(col)
        warnings = ["ignoring column %r" % c for c in header if c not in required]
        shares, log_p, log_y, log_z = [], [], [], []
        errors = []
        for line_no, row in enumerate(reader, start=2):
            try:
                w_row = [float(row["w_%s" % g]) for g in goods]
                p_row = [float(row["log_p_%s" % g]) for g in goods]
                ly = float(row["log_y"])
                lz = float(row["log_z"])
            except (TypeError, ValueError):
                errors.append((line_no, "unparseable numeric cell"))
            else:
                if not all(np.isfinite(v) for v in w_row + p_row + [ly, lz]):
                    errors.append((line_no, "non-finite value"))
                elif any(w < 0.0 or w > 1.0 for w in w_row):
                    errors.append((line_no, "share outside [0, 1]"))
                elif sum(w_row) > 1.0 + 1e-9:
                    errors.append((line_no, "modeled shares exceed total budget"))
                else:
                    shares.append(w_row)
                    log_p.append(p_row)
                    log_y.append(ly)
                    log_z.append(lz)
            if len(errors) > 100:
                break
        if errors:
            raise RowDataError(errors)
    ds = Dataset(goods=goods, shares=np.array(shares, dtype=float),
                 log_prices=np.array(log_p, dtype=float),
                 log_y=np.array(log_y, dtype=float), log_z=np.array(log_z, dtype=float))
    return ds, warnings


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_dataset_csv(path, ds):
    header = (["w_%s" % g for g in ds.goods]
              + ["log_p_%s" % g for g in ds.goods] + ["log_y", "log_z"])
    rows = []
    for i in range(ds.n):
        rows.append(["%.17g" % v for v in ds.shares[i]]
                    + ["%.17g" % v for v in ds.log_prices[i]]
                    + ["%.17g" % ds.log_y[i], "%.17g" % ds.log_z[i]])
    _write_csv(path, header, rows)


def _thread_count():
    raw = os.environ.get("WM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    threads = _thread_count()
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _surface_for_config(cfg, max_order):
    if cfg.population:
        pop = parse_population(cfg.population)
        return surface_from_population(pop, max_order), pop, None
    if not cfg.data:
        raise ValueError("either --population or --data is required")
    ds, _ = ingest_csv(cfg.data, cfg.goods)
    good = cfg.good or ds.goods[0]
    basis = BasisSpec(cfg.price_degree, cfg.income_degree, cfg.include_control)
    fs = first_stage(ds) if cfg.include_control else None
    fits = [fit_moment_surface(ds, good, n, basis, fs) for n in range(1, 4)]
    return fitted_surface(fits).moment_surface, None, ds


def _bundle(cfg, **payload):
    bundle = {"version": VERSION, "seed": cfg.seed, "config_hash": cfg.hash()}
    bundle.update(payload)
    return bundle


def _cmd_simulate(cfg):
    if cfg.seed is None:
        raise ValueError("--seed is required for simulate")
    pop = parse_population(cfg.population or "L0")
    if isinstance(pop, CobbDouglasPopulation):
        ds = cobb_douglas_cross_section(pop, cfg.n, cfg.seed, goods=cfg.goods
                                        if len(cfg.goods) == pop.k else None)
    else:
        ds = population_cross_section(pop, cfg.n, cfg.seed, good=cfg.goods[0])
    _write_dataset_csv(os.path.join(cfg.out, "draws.csv"), ds)
    return _bundle(cfg, rows=ds.n, columns=list(ds.goods))


def _cmd_estimate(cfg):
    if not cfg.data:
        raise ValueError("--data is required for estimate")
    ds, warnings = ingest_csv(cfg.data, cfg.goods)
    basis = BasisSpec(cfg.price_degree, cfg.income_degree, cfg.include_control)
    fs = first_stage(ds) if cfg.include_control else None
    fits = []
    for good in ds.goods:
        for order in (1, 2, 3):
            fits.append(fit_moment_surface(ds, good, order, basis, fs))
    fit_dicts = [f.to_dict() for f in fits]
    with open(os.path.join(cfg.out, "fits.json"), "w") as fh:
        json.dump(fit_dicts, fh, sort_keys=True, indent=2)
    first = {k: v for k, v in (fs.coefficients if fs else {}).items()}
    return _bundle(cfg, fits=fit_dicts, first_stage=first, warnings=warnings)


def _cmd_welfare(cfg):
    surface, _, _ = _surface_for_config(cfg, max_order=4 if cfg.population else 3)
    quad = QuadratureRule.gauss_legendre(cfg.quad_nodes)
    y = cfg.y
    thresholds = (cfg.z, cfg.k) if cfg.z is not None and cfg.k is not None else None

    def one(dp):
        pc = PriceChange.scalar(cfg.p0, cfg.p0 + dp, y)
        rep = build_report(surface, pc, quad, cfg.b_lo, cfg.b_hi, thresholds)
        return rep.to_dict()

    reports = _map_ordered(one, list(cfg.dp))
    header = ["dp", "first_order", "ra", "robust", "path", "bound_lower",
              "bound_upper", "var_robust", "var_additive", "var_first_order",
              "A1", "A2", "A3", "A4"]
    rows = [[r["dp"], r["first_order"], r["ra"], r["robust"], r["path"],
             r["bounds"]["lower"], r["bounds"]["upper"], r["variance"]["robust"],
             r["variance"]["additive"], r["variance"]["first_order"],
             r["decomposition"]["A1"], r["decomposition"]["A2"],
             r["decomposition"]["A3"], r["decomposition"]["A4"]] for r in reports]
    _write_csv(os.path.join(cfg.out, "sweep.csv"), header, rows)
    return _bundle(cfg, reports=reports)


def _cmd_oracle_check(cfg):
    pop = parse_population(cfg.population or "L0")
    surface = surface_from_population(pop, 4)
    quad = QuadratureRule.gauss_legendre(cfg.quad_nodes)

    def one(dp):
        pc = PriceChange.scalar(cfg.p0, cfg.p0 + dp, cfg.y)
        exact = population_cv(pop, pc).mean
        ra = cv_ra(surface, pc)
        robust = cv_moment_local(surface, 1, pc)
        return {
            "dp": dp,
            "exact": exact,
            "first_order": cv_first_order(surface, pc),
            "ra": ra,
            "robust": robust,
            "path": cv_path(surface, pc, quad),
            "err_ra": ra - exact,
            "err_robust": robust - exact,
        }

    table = _map_ordered(one, list(cfg.dp))
    header = ["dp", "exact", "first_order", "ra", "robust", "path",
              "err_ra", "err_robust"]
    _write_csv(os.path.join(cfg.out, "sweep.csv"), header,
               [[row[c] for c in header] for row in table])
    return _bundle(cfg, oracle_check=table)


def _cmd_rationality(cfg):
    degree = cfg.degree
    grid = cfg.grid or 10 * (degree + 1)
    pop = ds = None
    if cfg.population:
        pop = parse_population(cfg.population)
        surface = surface_from_population(pop, degree + 2)
    else:
        surface, _, ds = _surface_for_config(cfg, max_order=3)
        if degree + 2 > 3:
            raise ValueError("fitted surfaces carry orders up to 3; degree must be 1")

    def box_at(b):
        if pop is not None:
            lo, hi = demand_support(pop, b)
            return SupportBox(lo, hi)
        # empirical support: quantities observed within 5% of the budget
        lp0, ly0 = np.log(b.price(0)), np.log(b.income)
        near = ((np.abs(ds.log_prices[:, 0] - lp0) <= np.log(1.05))
                & (np.abs(ds.log_y - ly0) <= np.log(1.05)))
        if not np.any(near):
            raise ValueError("no observations within 5%% of budget (%g, %g)"
                             % (b.price(0), b.income))
        q = ds.shares[near, 0] * np.exp(ds.log_y[near] - ds.log_prices[near, 0])
        return SupportBox(float(np.min(q)), float(np.max(q)))

    verdicts = []
    for p in cfg.p_grid:
        for y in cfg.y_grid:
            b = Budget((p,), y)
            box = box_at(b)
            if degree <= 1:
                v = degree1_cone_test(surface, b, box)
            else:
                v = lp_violation_search(surface, b, degree, box, grid)
            rec = {"budget": {"prices": [p], "income": y}, "degree": degree}
            rec.update(v.to_dict())
            verdicts.append(rec)
    with open(os.path.join(cfg.out, "verdicts.json"), "w") as fh:
        json.dump(verdicts, fh, sort_keys=True, indent=2)
    return _bundle(cfg, verdicts=verdicts)


COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "welfare": _cmd_welfare,
    "rationality": _cmd_rationality,
    "oracle-check": _cmd_oracle_check,
}

VALIDATION_ERRORS = (SchemaError, RowDataError, SingularDesignError,
                     DegenerateDataError, ValueError, FileNotFoundError,
                     NotADirectoryError, KeyError)
NUMERIC_ERRORS = (DomainError, OrderError, NumericError, FitError,
                  SimplexError, InternalConsistencyError,
                  BootstrapInstabilityError, FloatingPointError, OverflowError)


def run(command, cfg):
    """Execute one subcommand; returns (bundle, exit_code)."""
    os.makedirs(cfg.out, exist_ok=True)
    bundle = COMMANDS[command](cfg)
    with open(os.path.join(cfg.out, "report.json"), "w") as fh:
        json.dump(bundle, fh, sort_keys=True, indent=2)
    return bundle, 0


def _float_list(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="welfare-moments",
                                     description="Welfare effects of price changes "
                                                 "from cross-sectional demand moments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--population")
    parser.add_argument("--data")
    parser.add_argument("--goods", type=lambda s: s.split(","))
    parser.add_argument("--good")
    parser.add_argument("--basis-degree", type=int, dest="price_degree")
    parser.add_argument("--income-degree", type=int, dest="income_degree")
    parser.add_argument("--no-control", action="store_false", dest="include_control",
                        default=None)
    parser.add_argument("--p0", type=float)
    parser.add_argument("--y", type=float)
    parser.add_argument("--dp", type=_float_list)
    parser.add_argument("--b-lo", type=float, dest="b_lo")
    parser.add_argument("--b-hi", type=float, dest="b_hi")
    parser.add_argument("--z", type=float)
    parser.add_argument("--k", type=float)
    parser.add_argument("--quad-nodes", type=int, dest="quad_nodes")
    parser.add_argument("--degree", type=int)
    parser.add_argument("--grid", type=int)
    parser.add_argument("--p-grid", type=_float_list, dest="p_grid")
    parser.add_argument("--y-grid", type=_float_list, dest="y_grid")
    parser.add_argument("--n", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--bootstrap-reps", type=int, dest="bootstrap_reps")
    parser.add_argument("--level", type=float)
    parser.add_argument("--out")
    return parser


def config_from_args(args):
    cfg = RunConfig()
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        for key, value in file_cfg.items():
            if not hasattr(cfg, key):
                raise ValueError("unknown config key %r" % key)
            setattr(cfg, key, value)
    for key in vars(cfg):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        _, code = run(args.command, cfg)
        return code
    except NUMERIC_ERRORS as exc:
        _emit_error(exc)
        return 2
    except VALIDATION_ERRORS as exc:
        _emit_error(exc)
        return 1


def _emit_error(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, RowDataError):
        payload["rows"] = [{"line": line, "problem": msg} for line, msg in exc.errors[:100]]
    if isinstance(exc, SchemaError):
        payload["column"] = exc.column
    json.dump(payload, sys.stderr)
    sys.stderr.write("\n")


if __name__ == "__main__":
    sys.exit(main())

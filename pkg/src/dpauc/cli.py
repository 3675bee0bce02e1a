"""Command line experiment runner.

Subcommands: ``gen``, ``run``, ``predict``, ``attack``.  Every option can
also come from a YAML ``--config`` file; nested sections are flattened to
their leaf keys (which match the long option names with ``-`` replaced by
``_``) and explicit flags win over the file.

Exit codes: 0 success, 1 validation error, 2 every trial failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import yaml

from .analysis import (
    empirical_std_global_laplace,
    empirical_std_local_laplace,
    empirical_std_rr_noisy,
    monte_carlo,
    score_density,
    topk_attack,
    var_global_laplace,
    var_local_laplace,
    var_rr_noisy,
)
from .data import REFERENCE_SPEC, ScoreFamily, SyntheticSpec, gen_synthetic, load_csv, save_csv
from .federation import PartitionMode, Protocol, ProtocolConfig, SensitivityMode, TrialFailure
from .mechanisms import SeededRng
from .metrics import Dataset, auc_rank

log = logging.getLogger("dpauc")

EXIT_OK, EXIT_VALIDATION, EXIT_ALL_FAILED = 0, 1, 2
_DATA_STREAM = 0

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "out": None,
    "path": None,
    "m": REFERENCE_SPEC.m,
    "base_rate": REFERENCE_SPEC.base_rate,
    "separation": REFERENCE_SPEC.separation,
    "family": REFERENCE_SPEC.family.value,
    # run
    "protocols": ["threshold-laplace"],
    "eps": [1.0, 2.0, 4.0, 8.0],
    "clients": [10],
    "grid_sizes": [100],
    "alphas": [0.5],
    "partitions": ["iid"],
    "sensitivity_mode": SensitivityMode.LOCAL_MAX_RANK.value,
    "delta": 1e-5,
    "exact_pn": False,
    "trials": 100,
    # predict
    "formulas": ["local-laplace", "global-laplace", "rr-noisy"],
    "grid": None,
    # attack
    "k": [1, 10, 100],
    "bins": 20,
    "density_out": None,
}

# closed-form checks need far more trials than a sweep cell
COMMAND_DEFAULTS = {"predict": {"trials": 10_000}}

# Parameter grids of the closed-form checks: (K, P, N, eps), (K, M, eps),
# (M, P, N, eps).
DEFAULT_PREDICT_GRID = {
    "local-laplace": [[100, 50, 50, 1.0], [100, 50, 50, 4.0], [1000, 200, 800, 1.0]],
    "global-laplace": [[10, 100, 1.0], [10, 100, 2.0], [100, 1000, 1.0]],
    "rr-noisy": [[1000, 200, 800, 0.5], [1000, 200, 800, 1.0], [1000, 200, 800, 2.0]],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def fmt(x) -> str:
    """Plain-decimal CSV field; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if not np.isfinite(x):
            return ""
        return np.format_float_positional(float(x), trim="-")
    return str(x)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(row.get(h)) for h in header])
    text = buf.getvalue()
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# config handling


def _flatten(tree, out=None, where="config"):
    out = {} if out is None else out
    for key, value in tree.items():
        key = str(key).replace("-", "_")
        if isinstance(value, dict) and key != "grid":
            _flatten(value, out, f"{where}.{key}")
        else:
            if key in out:
                raise UsageError(f"duplicate config key {key!r} ({where})")
            out[key] = value
    return out


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            tree = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(tree, dict):
        raise UsageError(f"config {path} must be a mapping")
    flat = _flatten(tree)
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return flat


def resolve(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    opts.update(COMMAND_DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        opts.update(load_config(args.config))
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            opts[key] = value
    return opts


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _load_dataset(opts) -> Dataset:
    if opts["path"]:
        try:
            return load_csv(opts["path"])
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    return gen_synthetic(_synthetic_spec(opts), SeededRng(int(opts["seed"])).spawn(_DATA_STREAM))


def _synthetic_spec(opts) -> SyntheticSpec:
    try:
        return SyntheticSpec(
            int(opts["m"]), float(opts["base_rate"]), float(opts["separation"]), opts["family"]
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synthetic data parameters: {exc}") from None


def _seed(opts) -> int:
    seed = int(opts["seed"])
    if not 0 <= seed < 2**64:
        raise UsageError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


# ---------------------------------------------------------------------------
# gen


def cmd_gen(opts) -> int:
    if not opts["out"]:
        raise UsageError("gen needs --out")
    spec = _synthetic_spec(opts)
    data = gen_synthetic(spec, SeededRng(_seed(opts)).spawn(_DATA_STREAM))
    save_csv(data, opts["out"])
    log.info("wrote %d samples (P=%d, N=%d) to %s", data.m, data.p, data.n, opts["out"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


RUN_HEADER = [
    "protocol", "eps", "eps_prime", "alpha", "clients", "grid_size", "partition",
    "trials", "mean", "std", "failures", "seed", "error",
]


@dataclass(frozen=True)
class Cell:
    config: ProtocolConfig
    trials: int
    seed: int


def build_cells(opts, m: int) -> list[Cell]:
    trials = int(opts["trials"])
    if trials < 1:
        raise UsageError(f"trials must be >= 1, got {trials}")
    seed = _seed(opts)
    cells = []
    try:
        protocols = [Protocol(p) for p in _as_list(opts["protocols"])]
        partitions = [PartitionMode(p) for p in _as_list(opts["partitions"])]
        mode = SensitivityMode(opts["sensitivity_mode"])
        eps_list = [float(e) for e in _as_list(opts["eps"])]
        clients = [int(k) for k in _as_list(opts["clients"])]
        grids = [int(g) for g in _as_list(opts["grid_sizes"])]
        alphas = [float(a) for a in _as_list(opts["alphas"])]
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    for e in eps_list:
        if not e > 0:
            raise UsageError(f"eps values must be > 0, got {e}")
    for k in clients:
        if not 1 <= k <= m:
            raise UsageError(f"clients must be in [1, M={m}], got {k}")
    for proto in protocols:
        grid_axis = grids if proto.is_threshold else [100]
        alpha_axis = alphas if proto is Protocol.RANK_LAPLACE else [0.5]
        for eps, k, part, g, a in itertools.product(eps_list, clients, partitions, grid_axis, alpha_axis):
            try:
                cfg = ProtocolConfig(
                    proto, eps_total=eps, n_clients=k, partition=part, grid_size=g,
                    alpha=a, sensitivity_mode=mode, delta=float(opts["delta"]),
                    use_exact_pn=bool(opts["exact_pn"]),
                )
            except ValueError as exc:
                raise UsageError(f"invalid grid cell ({proto.value}, eps={eps}): {exc}") from None
            cells.append(Cell(cfg, trials, seed))
    if not cells:
        raise UsageError("the sweep grid is empty")
    return cells


def _run_cell(cell: Cell, dataset: Dataset) -> dict:
    cfg = cell.config
    row = {
        "protocol": cfg.protocol.value,
        "eps": cfg.eps_total,
        "eps_prime": cfg.eps_per_stat if cfg.protocol.is_threshold else None,
        "alpha": cfg.alpha if cfg.protocol is Protocol.RANK_LAPLACE and not cfg.use_exact_pn else None,
        "clients": cfg.n_clients,
        "grid_size": cfg.grid_size if cfg.protocol.is_threshold else None,
        "partition": cfg.partition.value,
        "trials": cell.trials,
        "seed": cell.seed,
    }
    try:
        res = monte_carlo(cfg, dataset, cell.trials, cell.seed)
    except TrialFailure as exc:
        row.update(failures=cell.trials, error=str(exc))
        return row
    row.update(mean=res.mean, std=res.std, failures=res.failures)
    if res.failure_messages:
        row["error"] = res.failure_messages[0]
    return row


def _map_cells(cells, dataset, workers: int) -> list[dict]:
    if workers <= 1 or len(cells) == 1:
        return [_run_cell(c, dataset) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order
        return list(pool.map(_run_cell, cells, itertools.repeat(dataset)))


def cmd_run(opts) -> int:
    dataset = _load_dataset(opts)
    cells = build_cells(opts, dataset.m)
    log.info("running %d grid cells x %d trials", len(cells), cells[0].trials)
    rows = _map_cells(cells, dataset, int(opts["workers"]))
    truth = {"protocol": "ground-truth", "mean": auc_rank(dataset), "std": 0.0,
             "failures": 0, "seed": _seed(opts)}
    write_csv(opts["out"], RUN_HEADER, [truth] + rows)
    if all(r["failures"] == r["trials"] for r in rows):
        log.error("every trial of every grid cell failed")
        return EXIT_ALL_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict


PREDICT_HEADER = [
    "formula_id", "k", "m", "p", "n", "eps",
    "predicted_std", "empirical_std", "relative_error", "trials", "seed",
]


def _predict_row(formula: str, params, trials: int, seed: int) -> dict:
    if formula == "local-laplace":
        k, p, n, eps = int(params[0]), int(params[1]), int(params[2]), float(params[3])
        m = p + n
        pred = var_local_laplace(k, p, n, eps).std
        emp = empirical_std_local_laplace(k, p, n, eps, trials, seed)
    elif formula == "global-laplace":
        k, m, eps = int(params[0]), int(params[1]), float(params[2])
        p, n = m // 2, m - m // 2
        pred = var_global_laplace(k, m, p, n, eps).std
        emp = empirical_std_global_laplace(k, m, p, n, eps, trials, seed)
    elif formula == "rr-noisy":
        m, p, n, eps = int(params[0]), int(params[1]), int(params[2]), float(params[3])
        k = None
        pred = var_rr_noisy(m, p, n, eps).std
        emp = empirical_std_rr_noisy(m, p, n, eps, trials, seed)
    else:
        raise UsageError(f"unknown formula {formula!r}")
    return {
        "formula_id": formula, "k": k, "m": m, "p": p, "n": n, "eps": eps,
        "predicted_std": pred, "empirical_std": emp,
        "relative_error": abs(pred - emp) / pred, "trials": trials, "seed": seed,
    }


def _predict_task(task):
    return _predict_row(*task)


def cmd_predict(opts) -> int:
    trials = int(opts["trials"])
    if trials < 2:
        raise UsageError(f"predict needs trials >= 2, got {trials}")
    seed = _seed(opts)
    grid = opts["grid"] or DEFAULT_PREDICT_GRID
    tasks = []
    for formula in _as_list(opts["formulas"]):
        if formula not in DEFAULT_PREDICT_GRID:
            raise UsageError(f"unknown formula {formula!r}")
        for params in grid.get(formula, []):
            tasks.append((formula, params, trials, seed))
    workers = int(opts["workers"])
    try:
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_predict_task, tasks))
        else:
            rows = [_predict_task(t) for t in tasks]
    except (ValueError, IndexError, TypeError) as exc:
        raise UsageError(f"invalid prediction grid: {exc}") from None
    write_csv(opts["out"], PREDICT_HEADER, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack


ATTACK_HEADER = ["k", "true_positives_in_topk", "precision", "recall", "seed"]
DENSITY_HEADER = ["bin_left", "bin_right", "positive", "negative", "positive_empty", "negative_empty"]


def cmd_attack(opts) -> int:
    dataset = _load_dataset(opts)
    seed = _seed(opts)
    ks = sorted(int(k) for k in _as_list(opts["k"]))
    for k in ks:
        if not 1 <= k <= dataset.m:
            raise UsageError(f"k must be in [1, M={dataset.m}], got {k}")
    bins = int(opts["bins"])
    if bins < 1:
        raise UsageError(f"bins must be >= 1, got {bins}")
    rows = []
    for k in ks:
        r = topk_attack(dataset, k)
        rows.append({"k": r.k, "true_positives_in_topk": r.true_positives_in_topk,
                     "precision": r.precision, "recall": r.recall, "seed": seed})
    write_csv(opts["out"], ATTACK_HEADER, rows)

    dens = score_density(dataset, bins)
    density_out = opts["density_out"]
    if density_out is None and opts["out"] not in (None, "-"):
        stem = opts["out"][:-4] if opts["out"].endswith(".csv") else opts["out"]
        density_out = f"{stem}_density.csv"
    drows = [
        {"bin_left": dens.edges[i], "bin_right": dens.edges[i + 1],
         "positive": dens.positive[i], "negative": dens.negative[i],
         "positive_empty": dens.positive_empty, "negative_empty": dens.negative_empty}
        for i in range(bins)
    ]
    write_csv(density_out, DENSITY_HEADER, drows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file with option values (flags override)")
    p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    p.add_argument("--out", help="output CSV path ('-' for stdout)")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--data", dest="path", help="dataset CSV (score,label); default: synthetic")
    g.add_argument("--m", type=int, help="synthetic sample count")
    g.add_argument("--base-rate", type=float, help="synthetic positive fraction")
    g.add_argument("--separation", type=float, help="synthetic class separation")
    g.add_argument("--family", choices=[f.value for f in ScoreFamily])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpauc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset CSV")
    _common(p)
    _data_opts(p)

    p = sub.add_parser("run", help="Monte Carlo sweep over protocol settings")
    _common(p)
    _data_opts(p)
    p.add_argument("--protocols", nargs="+", choices=[x.value for x in Protocol])
    p.add_argument("--eps", nargs="+", type=float, help="total label budgets")
    p.add_argument("--clients", nargs="+", type=int)
    p.add_argument("--grid-sizes", nargs="+", type=int, help="threshold counts |grid|")
    p.add_argument("--alphas", nargs="+", type=float, help="rank-laplace budget split")
    p.add_argument("--partitions", nargs="+", choices=[x.value for x in PartitionMode])
    p.add_argument("--sensitivity-mode", choices=[x.value for x in SensitivityMode])
    p.add_argument("--delta", type=float, help="Gaussian delta")
    p.add_argument("--exact-pn", action="store_const", const=True,
                   help="analysis only: use true P and N in rank protocols")
    p.add_argument("--trials", type=int)

    p = sub.add_parser("predict", help="closed-form std vs Monte Carlo")
    _common(p)
    p.add_argument("--formulas", nargs="+", choices=list(DEFAULT_PREDICT_GRID))
    p.add_argument("--trials", type=int)

    p = sub.add_parser("attack", help="top-k label inference and score densities")
    _common(p)
    _data_opts(p)
    p.add_argument("--k", nargs="+", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--density-out", help="density CSV path (default: <out>_density.csv)")
    return parser


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "predict": cmd_predict, "attack": cmd_attack}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](resolve(args))
    except UsageError as exc:
        print(f"dpauc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrialFailure as exc:
        print(f"dpauc {args.command}: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":
    sys.exit(main())

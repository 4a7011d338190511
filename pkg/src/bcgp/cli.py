"""Command-line interface: ``bcgp fit | predict | decompose | benchmark``.

Configuration is a flat ``key = value`` text file (``#`` starts a comment)
plus ``--set key=value`` overrides; the command line wins. Recognized keys
are the fields of :class:`HyperParams` and :class:`ChainConfig` and the run
keys listed in ``RUN_DEFAULTS``. Any other key is an error.

Every CSV written here starts with a ``# manifest <sha256>`` line tying it
to the run that produced it.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .kriging import fit_kriging, kriging_predict
from .mcmc import ChainConfig, run_chain
from .model import HyperParams, ModelState, TrainingSet
from .predict import predict_batched
from .testbed import (WING_WEIGHT_INPUTS, equispaced_design, get_function, group_by_bins,
                      lhs_maximin, relative_errors, rmspe, sobol_points)

log = logging.getLogger("bcgp")

FLOAT_FMT = "%.17g"

RUN_DEFAULTS = {
    "function": None,
    "n_train": None,
    "design": None,
    "design_seed": 0,
    "n_test": None,
    "level": 0.95,
    "chains": 1,
}

# reference RMSPE values; CGP is quoted only and never recomputed
REFERENCE_RMSPE = {
    "bjx": {"bcgp": 0.014, "kriging_constant": 0.067, "kriging_cubic": 0.061, "cgp": 0.023},
    "wingweight": {"bcgp": 3.62, "kriging_constant": 1.03, "kriging_linear": 0.91, "cgp": 2.76},
}

# desk-scale defaults for built-in problems
BUILTIN = {
    "bjx": {"n_train": 17, "design": "equispaced", "n_test": 101,
            "chain": {"n_adapt": 200, "num_updates": 60, "n_burn": 1000, "n_mcmc": 2000},
            "baselines": ("constant", "cubic")},
    "wingweight": {"n_train": 50, "design": "lhs", "n_test": 150,
                   "chain": {"n_adapt": 200, "num_updates": 60, "n_burn": 2000, "n_mcmc": 3000},
                   "baselines": ("constant", "linear")},
}


class ConfigError(ValueError):
    pass


class ArtifactMismatchError(RuntimeError):
    pass


# ---------------------------------------------------------------- config

def _field_defaults(cls):
    return {f.name: f.default for f in dataclasses.fields(cls)}


HP_KEYS = _field_defaults(HyperParams)
CHAIN_KEYS = _field_defaults(ChainConfig)


def _parse_value(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if text.lower() == "none":
            return None
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if default is None and key not in ("function", "design"):
            return int(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def parse_assignments(lines, source="config") -> dict:
    """``key = value`` lines to a dict of strings; duplicate keys: last wins."""
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def resolve_config(raw: dict):
    """Split raw strings into (hp overrides, chain overrides, run settings)."""
    hp, chain, run = {}, {}, dict(RUN_DEFAULTS)
    for key, text in raw.items():
        if key in HP_KEYS:
            hp[key] = _parse_value(key, text, HP_KEYS[key])
        elif key in CHAIN_KEYS:
            chain[key] = _parse_value(key, text, CHAIN_KEYS[key])
        elif key in RUN_DEFAULTS:
            run[key] = _parse_value(key, text, RUN_DEFAULTS[key])
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    return hp, chain, run


def _gather_config(args) -> dict:
    raw = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        raw.update(parse_assignments(path.read_text(encoding="utf-8").splitlines(), str(path)))
    raw.update(parse_assignments(getattr(args, "set", None) or [], "--set"))
    if getattr(args, "function", None):
        raw["function"] = args.function
    if getattr(args, "seed", None) is not None:
        raw["seed"] = str(args.seed)
    if getattr(args, "chains", None) is not None:
        raw["chains"] = str(args.chains)
    if getattr(args, "level", None) is not None:
        raw["level"] = str(args.level)
    if getattr(args, "no_nugget", False):
        raw["include_nugget"] = "false"
    return raw


# ---------------------------------------------------------------- data files

def read_data_csv(path, require_y=True):
    """Read ``x1..xd[,y]`` with a header row. Returns ``(X, y or None)``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    if not xcols:
        raise ValueError(f"{path}: no input columns named x1..xd")
    if "y" not in header and require_y:
        raise ValueError(f"{path}: missing column 'y'")
    ycol = header.index("y") if "y" in header else None
    X, y = [], []
    for r_i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r_i} has {len(row)} fields, expected {len(header)}")
        try:
            X.append([float(row[i]) for i in xcols])
            if ycol is not None:
                y.append(float(row[ycol]))
        except ValueError:
            for c, cell in enumerate(row):
                try:
                    float(cell)
                except ValueError:
                    raise ValueError(f"{path}: row {r_i}, column {header[c]!r}: "
                                     f"not a number: {cell!r}") from None
            raise
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)) or (y and not np.all(np.isfinite(y))):
        raise ValueError(f"{path}: missing or non-finite values are not allowed")
    return X, (np.asarray(y, dtype=float) if ycol is not None else None)


def _write_csv(path, header, rows, manifest_hash, comments=()):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest {manifest_hash}\n")
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else FLOAT_FMT % v for v in row) + "\n")


def read_manifest_line(path) -> str:
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first.startswith("# manifest "):
        raise ArtifactMismatchError(f"{path}: no manifest line")
    return first.split()[-1]


def read_table(path):
    """Header and float rows of a CSV written by this module."""
    with Path(path).open(encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    return header, rows.reshape(-1, len(header))


# ---------------------------------------------------------------- draws

def state_columns(d, n_latent):
    cols = ["beta0", "omega"]
    cols += [f"rho_G{j + 1}" for j in range(d)]
    cols += [f"rho_L{j + 1}" for j in range(d)]
    cols += ["sigma2_eps", "mu_V", "sigma2_V"]
    cols += [f"rho_V{j + 1}" for j in range(d)]
    cols += [f"W{i + 1}" for i in range(n_latent)]
    return cols


def state_row(s: ModelState):
    return ([s.beta0, s.omega, *s.rho_G, *s.rho_L, s.sigma2_eps, s.mu_V, s.sigma2_V, *s.rho_V]
            + list(s.W))


def row_state(row, d) -> ModelState:
    row = np.asarray(row, dtype=float)
    i = 2
    rho_G, rho_L = row[i:i + d], row[i + d:i + 2 * d]
    i += 2 * d
    sigma2_eps, mu_V, sigma2_V = row[i:i + 3]
    rho_V = row[i + 3:i + 3 + d]
    W = row[i + 3 + d:]
    return ModelState(beta0=row[0], omega=row[1], rho_G=rho_G, rho_L=rho_L,
                      sigma2_eps=sigma2_eps, V=np.exp(W), mu_V=mu_V, sigma2_V=sigma2_V,
                      rho_V=rho_V)


def write_draws(path, states, d, manifest_hash):
    n_latent = states[0].V.shape[0] if states else 0
    _write_csv(path, state_columns(d, n_latent), (state_row(s) for s in states), manifest_hash,
               comments=("latent variances stored as W = log V",))


def read_draws(path, d):
    _, rows = read_table(path)
    return [row_state(r, d) for r in rows]


# ---------------------------------------------------------------- runs

def build_problem(run: dict, data_path=None):
    """Training set plus default test inputs (or ``None``) for a run."""
    if data_path:
        X, y = read_data_csv(data_path)
        return TrainingSet.from_arrays(X, y), None
    name = run.get("function")
    if not name:
        raise ConfigError("give --data or --function")
    fn = get_function(name)
    problem = BUILTIN[name]
    n = run["n_train"] or problem["n_train"]
    design = run["design"] or problem["design"]
    if design == "equispaced":
        if fn.d != 1:
            raise ConfigError("the equispaced design is one-dimensional")
        U = equispaced_design(n)
    elif design == "lhs":
        U = lhs_maximin(n, fn.d, seed=run["design_seed"])
    elif design == "sobol":
        U = sobol_points(n, fn.d)
    else:
        raise ConfigError(f"unknown design {design!r}")
    X = fn.from_unit(U)
    data = TrainingSet.from_arrays(X, fn(X), bounds=(fn.bounds[:, 0], fn.bounds[:, 1]))
    n_test = run["n_test"] or problem["n_test"]
    X_test = (fn.from_unit(equispaced_design(n_test)) if fn.d == 1
              else fn.from_unit(sobol_points(n_test, fn.d)))
    return data, X_test


def derived_seeds(seed: int, k: int):
    if k == 1:
        return [int(seed)]
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(int(seed)).spawn(k)]


def make_manifest(data, hp, cfg, run, seeds):
    body = {
        "version": __version__,
        "data_fingerprint": data.fingerprint(),
        "n": data.n,
        "d": data.d,
        "input_lo": [float(v) for v in data.input_lo],
        "input_hi": [float(v) for v in data.input_hi],
        "hyperparameters": {k: _jsonable(v) for k, v in dataclasses.asdict(hp).items()},
        "chain": {k: _jsonable(v) for k, v in dataclasses.asdict(cfg).items()},
        "run": {k: _jsonable(v) for k, v in run.items()},
        "chain_seeds": seeds,
        "phases": {"calibration": cfg.num_updates * cfg.n_adapt, "burn_in": cfg.n_burn,
                   "production": cfg.n_mcmc},
    }
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    return body, digest


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def _chain_job(args):
    data, hp, cfg = args
    return run_chain(data, hp, cfg)


def fit(data: TrainingSet, hp: HyperParams, cfg: ChainConfig, run: dict, out_dir):
    """Run the chain(s) and write draws, acceptance, widths, training data and manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = int(run["chains"])
    if k < 1:
        raise ConfigError("chains must be at least 1")
    seeds = derived_seeds(cfg.seed, k)
    manifest, digest = make_manifest(data, hp, cfg, run, seeds)
    jobs = [(data, hp, dataclasses.replace(cfg, seed=s)) for s in seeds]
    if k == 1:
        chains = [_chain_job(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=k) as pool:
            chains = list(pool.map(_chain_job, jobs))
    names = ["draws.csv"] if k == 1 else [f"draws_chain{i + 1}.csv" for i in range(k)]
    manifest["draw_files"] = names
    for name, chain in zip(names, chains):
        write_draws(out / name, chain.states, data.d, digest)
    acc_rows = []
    for c, chain in enumerate(chains, 1):
        for phase, book in chain.acceptance_log.items():
            for key, (a, p) in sorted(book.items()):
                acc_rows.append([str(c), phase, key, float(a), float(p), a / p if p else float("nan")])
    _write_csv(out / "acceptance.csv", ["chain", "phase", "parameter", "accepted", "proposed",
                                        "rate"], acc_rows, digest)
    w_rows = [[str(c), key, value] for c, chain in enumerate(chains, 1)
              for key, value in chain.final_widths.as_dict().items()]
    _write_csv(out / "widths.csv", ["chain", "parameter", "width"], w_rows, digest)
    _write_csv(out / "training.csv", [f"x{j + 1}" for j in range(data.d)] + ["y"],
               (list(x) + [y] for x, y in zip(data.X, data.y_raw)), digest)
    manifest["manifest_hash"] = digest
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return chains, digest


def load_run(run_dir, data_path=None):
    """Training set, hyperparameters and pooled draws of a fitted run.

    The training data (``data_path`` or the run's own copy) must match the
    fingerprint recorded at fit time, and every draws file must carry the
    run's manifest hash.
    """
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    digest = manifest["manifest_hash"]
    X, y = read_data_csv(data_path or run_dir / "training.csv")
    data = TrainingSet.from_arrays(X, y, bounds=(manifest["input_lo"], manifest["input_hi"]))
    if data.fingerprint() != manifest["data_fingerprint"]:
        raise ArtifactMismatchError("training data do not match the fitted run")
    hp = HyperParams(**manifest["hyperparameters"])
    states = []
    for name in manifest["draw_files"]:
        if read_manifest_line(run_dir / name) != digest:
            raise ArtifactMismatchError(f"{name} belongs to a different run")
        states.extend(read_draws(run_dir / name, data.d))
    return data, hp, states, manifest


def _test_points(args, run, data, default):
    if getattr(args, "points", None):
        X, _ = read_data_csv(args.points, require_y=False)
        return X
    if getattr(args, "grid", None):
        if data.d != 1:
            raise ConfigError("--grid is only available for one input")
        return np.linspace(data.input_lo[0], data.input_hi[0], args.grid)[:, None]
    if default is not None:
        return default
    raise ConfigError("give --points or --grid")


def prediction_rows(X, res):
    for i in range(X.shape[0]):
        yield list(X[i]) + [res.mean[i], res.draw_mean[i], res.lo[i], res.hi[i],
                            res.global_[i], res.local[i], res.error[i]]


PRED_COLS = ["mean", "draw_mean", "lo", "hi", "global", "local", "error"]


# ---------------------------------------------------------------- commands

def cmd_fit(args):
    hp_o, chain_o, run = resolve_config(_gather_config(args))
    data, _ = build_problem(run, args.data)
    if run["function"] and not args.data:
        chain_o = {**BUILTIN[run["function"]]["chain"], **chain_o}
    hp = HyperParams(**hp_o)
    cfg = ChainConfig(**chain_o)
    _, digest = fit(data, hp, cfg, run, args.out)
    print(f"wrote run {digest[:12]} to {args.out}")
    return 0


def _predict_common(args):
    data, hp, states, manifest = load_run(args.run, args.data)
    run = manifest["run"]
    default = None
    if run.get("function") and not args.data:
        _, default = build_problem({**RUN_DEFAULTS, **run})
    X = _test_points(args, run, data, default)
    level = args.level if args.level is not None else run.get("level", 0.95)
    res = predict_batched(X, states, data, hp, level=level, seed=manifest["chain"]["seed"])
    return data, X, res, manifest["manifest_hash"]


def cmd_predict(args):
    data, X, res, digest = _predict_common(args)
    xcols = [f"x{j + 1}" for j in range(data.d)]
    _write_csv(args.out, xcols + PRED_COLS, prediction_rows(X, res), digest,
               comments=(f"interval level {res.level:g}",))
    print(f"wrote {X.shape[0]} predictions to {args.out}")
    return 0


def cmd_decompose(args):
    data, X, res, digest = _predict_common(args)
    xcols = [f"x{j + 1}" for j in range(data.d)]
    rows = (list(X[i]) + [res.global_[i], res.local[i], res.error[i], res.mean[i]]
            for i in range(X.shape[0]))
    _write_csv(args.out, xcols + ["global", "local", "error", "total"], rows, digest)
    print(f"wrote {X.shape[0]} decompositions to {args.out}")
    return 0


def benchmark(name, hp, cfg, run, out_dir):
    """Fit BCGP and the kriging baselines on a built-in problem and score them."""
    out = Path(out_dir)
    run = {**run, "function": name}
    data, X_test = build_problem(run)
    fn = get_function(name)
    y_test = fn(X_test)
    chains, digest = fit(data, hp, cfg, run, out / "run")
    states = [s for c in chains for s in c.states]
    res = predict_batched(X_test, states, data, hp, level=run["level"], seed=cfg.seed)
    ref = REFERENCE_RMSPE[name]
    table = [["bcgp", rmspe(res.mean, y_test), ref["bcgp"]]]
    preds = {"bcgp": res.mean}
    for basis in BUILTIN[name]["baselines"]:
        model = fit_kriging(data, basis)
        mean, _ = kriging_predict(model, X_test)
        preds[f"kriging_{basis}"] = mean
        table.append([f"kriging_{basis}", rmspe(mean, y_test), ref[f"kriging_{basis}"]])
    _write_csv(out / "rmspe.csv", ["method", "rmspe", "reference"], table, digest,
               comments=(f"reference cgp {ref['cgp']} (quoted, not computed)",))
    xcols = [f"x{j + 1}" for j in range(fn.d)]
    methods = list(preds)
    rows = (list(X_test[i]) + [y_test[i]] + [preds[m][i] for m in methods]
            + [res.lo[i], res.hi[i], res.global_[i], res.local[i], res.error[i]]
            for i in range(X_test.shape[0]))
    _write_csv(out / "predictions.csv", xcols + ["truth"] + methods
               + ["bcgp_lo", "bcgp_hi", "bcgp_global", "bcgp_local", "bcgp_error"], rows, digest)
    summary = {"rmspe": {r[0]: r[1] for r in table},
               "mean_relative_error_bcgp": float(relative_errors(res.mean, y_test).mean())}
    if name == "wingweight":
        bin_rows = []
        for j, label in enumerate(WING_WEIGHT_INPUTS):
            lo, hi = fn.bounds[j]
            for b in group_by_bins(X_test[:, j], res.global_, 8, lo, hi):
                bin_rows.append([f"x{j + 1}", label, str(b["bin"]), b["lo"], b["hi"],
                                 float(b["count"]), b["min"], b["q1"], b["median"], b["q3"],
                                 b["max"]])
        _write_csv(out / "global_trend_bins.csv",
                   ["input", "name", "bin", "lo", "hi", "count", "min", "q1", "median", "q3",
                    "max"], bin_rows, digest)
    return table, summary


def cmd_benchmark(args):
    hp_o, chain_o, run = resolve_config(_gather_config(args))
    name = run["function"]
    if name not in BUILTIN:
        raise ConfigError(f"benchmark needs --function in {sorted(BUILTIN)}")
    cfg = ChainConfig(**{**BUILTIN[name]["chain"], **chain_o})
    table, summary = benchmark(name, HyperParams(**hp_o), cfg, run, args.out)
    print(f"{'method':<18}{'rmspe':>12}{'reference':>12}")
    for method, value, ref in table:
        print(f"{method:<18}{value:>12.4g}{ref:>12.4g}")
    print(f"mean relative error (bcgp): {summary['mean_relative_error_bcgp']:.4g}")
    return 0


def build_parser():
    hp_help = ", ".join(f"{k}={v}" for k, v in HP_KEYS.items())
    chain_help = ", ".join(f"{k}={v}" for k, v in CHAIN_KEYS.items())
    run_help = ", ".join(f"{k}={v}" for k, v in RUN_DEFAULTS.items())
    p = argparse.ArgumentParser(
        prog="bcgp", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Bayesian composite Gaussian process emulator.",
        epilog=("configuration keys and defaults\n"
                f"  model: {hp_help}\n  sampler: {chain_help}\n  run: {run_help}\n"
                "Built-in problems override the sampler phase lengths with desk-scale values."))
    p.add_argument("--version", action="version", version=f"bcgp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common_config(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")

    f = sub.add_parser("fit", help="run the sampler and write draws")
    f.add_argument("--data", help="CSV with columns x1..xd,y")
    f.add_argument("--function", choices=sorted(BUILTIN), help="built-in test function")
    f.add_argument("--seed", type=int)
    f.add_argument("--chains", type=int, help="independent chains with derived seeds")
    f.add_argument("--no-nugget", action="store_true", help="drop the white-noise term")
    f.add_argument("--out", required=True, help="output directory")
    common_config(f)
    f.set_defaults(func=cmd_fit)

    for name, func, what in (("predict", cmd_predict, "pointwise predictions"),
                             ("decompose", cmd_decompose, "global/local/error components")):
        q = sub.add_parser(name, help=f"write {what} from a fitted run")
        q.add_argument("--run", required=True, help="directory written by fit")
        q.add_argument("--data", help="training CSV to verify against the run")
        q.add_argument("--points", help="CSV of test inputs x1..xd")
        q.add_argument("--grid", type=int, help="equally spaced points over the 1-d input range")
        q.add_argument("--level", type=float, help="interval level (default 0.95)")
        q.add_argument("--out", required=True, help="output CSV")
        q.set_defaults(func=func)

    b = sub.add_parser("benchmark", help="BCGP vs kriging on a built-in function")
    b.add_argument("--function", required=True, choices=sorted(BUILTIN))
    b.add_argument("--seed", type=int)
    b.add_argument("--chains", type=int)
    b.add_argument("--level", type=float)
    b.add_argument("--no-nugget", action="store_true")
    b.add_argument("--out", required=True, help="output directory")
    common_config(b)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ArtifactMismatchError, ValueError, OSError) as exc:
        print(f"bcgp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Batch experiment runner.

Every subcommand is a pure function of its configuration and master seed:
no wall-clock seeding, validation before any computation, and outputs that
are byte-identical across worker counts.  Exit codes: 0 success, 1 a
checked invariant failed, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    _replication_arrays,
    rate_experiment,
    rate_result_to_csv,
    rate_result_to_json,
    variance_check,
)
from .chaos import (
    DiscretizedKernel,
    DiscretizedSpace,
    evaluate_chaos,
    fubini_check,
    poisson_limit_conditions,
)
from .graphs import (
    ConnectionRule,
    annulus,
    calibrate_delta,
    discretized_edge_kernel,
    edge_count,
    gilbert,
    occupation,
)
from .malliavin import Functional, count_functional, diff, diff_chaos, edge_functional
from .points import RngStream, Window, box_volume, configuration_to_text, sample_process
from .stein import stein_suite, truncate_poisson

DEFAULTS = {
    "stein-check": {
        "c_values": [0.5, 1.0, 2.0, 5.0, 10.0],
        "subsets_per_c": 200,
        "residual_tol": 1e-10,
        "extra_sets": [],
    },
    "rate": {
        "dimension": 1,
        "c": 2.0,
        "lambda_grid": [25.0, 50.0, 100.0, 200.0, 400.0],
        "reps": 100000,
        "n_strata": 256,
    },
    "contraction": {
        "n": 16,
        "q": 2,
        "family": "random",
        "count": 100,
        "lambdas": [25.0, 50.0, 100.0, 200.0],
        "c": 2.0,
        "fill": 0.3,
    },
    "sanity": {
        "dimension": 1,
        "reps": 10000,
        "intensity": 100.0,
        "rule": {"kind": "gilbert", "delta": 0.1},
        "box": [[-0.25, 0.25]],
        "n_strata": 256,
        "inject": None,
        "recon_configs": 500,
        "pair_checks": 200,
    },
    "sample": {"dimension": 2, "intensity": 50.0, "stream": 0},
    "occupation": {"dimension": 2, "rule": {"kind": "gilbert", "delta": 0.1}, "resolution": 512},
}


class CliError(Exception):
    """Configuration or validation problem: exit code 2."""


def _load_config(command: str, args) -> dict:
    config = dict(DEFAULTS[command])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object")
        config.update(loaded)
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            config[key] = json.loads(raw)
        except json.JSONDecodeError:
            config[key] = raw
    if args.seed is not None:
        config["seed"] = args.seed
    if "seed" not in config:
        raise CliError("a master seed is mandatory (use --seed or the config's seed field)")
    if not isinstance(config["seed"], int) or isinstance(config["seed"], bool) or config["seed"] < 0:
        raise CliError(f"seed must be a nonnegative integer, got {config['seed']!r}")
    config["workers"] = args.workers
    if config["workers"] < 1:
        raise CliError("--workers must be at least 1")
    config["out"] = args.out
    config["format"] = args.format
    return config


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_rule(spec, dimension: int) -> ConnectionRule:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise CliError("rule must be an object with a 'kind' field")
    kind = spec["kind"]
    try:
        if kind == "gilbert":
            return gilbert(dimension, float(spec["delta"]))
        if kind == "annulus":
            return annulus(dimension, float(spec["r_in"]), float(spec["r_out"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"bad rule specification {spec}: {exc}") from exc
    raise CliError(f"unknown rule kind {kind!r} (expected gilbert or annulus)")


def _require_positive(config: dict, key: str) -> float:
    value = config.get(key)
    if not isinstance(value, (int, float)) or value <= 0:
        raise CliError(f"{key} must be a positive number, got {value!r}")
    return float(value)


# ---------------------------------------------------------------------------
# stein-check
# ---------------------------------------------------------------------------

def cmd_stein_check(config: dict) -> int:
    c_values = config["c_values"]
    if not isinstance(c_values, list) or not c_values:
        raise CliError("c_values must be a nonempty list")
    for c in c_values:
        if not isinstance(c, (int, float)) or c <= 0:
            raise CliError(f"every mean must be positive, got {c!r}")
    subsets = config["subsets_per_c"]
    if not isinstance(subsets, int) or subsets < 1:
        raise CliError(f"subsets_per_c must be a positive integer, got {subsets!r}")
    tol = config["residual_tol"]
    extra = []
    for entry in config["extra_sets"]:
        c = entry.get("c")
        target = entry.get("set")
        if not isinstance(c, (int, float)) or c <= 0 or not isinstance(target, list):
            raise CliError(f"extra set entries need a positive c and an integer list: {entry}")
        k_max = truncate_poisson(float(c)).k_max
        for k in target:
            if not isinstance(k, int) or k < 0 or k > k_max:
                raise CliError(f"set element {k} outside the truncated support 0..{k_max} of c={c}")
        extra.append((float(c), target))

    rows = stein_suite(c_values, subsets, config["seed"], extra_sets=extra)
    lines = ["c,set_size,max_residual,sup_f,bound_f,sup_df,bound_df,sup_d2f,bound_d2f,ok"]
    failures = 0
    for row in rows:
        ok = row.max_residual <= tol and all(row.factor_ok)
        if not ok:
            failures += 1
            print(
                f"violation: c={row.c} A={sorted(row.target_set)} residual={row.max_residual:.3e}"
                f" factors={row.factors} bounds={row.bounds}",
                file=sys.stderr,
            )
        lines.append(
            f"{row.c!r},{len(row.target_set)},{row.max_residual!r},"
            f"{row.factors.sup_f!r},{row.bounds.sup_f!r},"
            f"{row.factors.sup_delta_f!r},{row.bounds.sup_delta_f!r},"
            f"{row.factors.sup_delta2_f!r},{row.bounds.sup_delta2_f!r},{int(ok)}"
        )
    _emit("\n".join(lines) + "\n", config["out"])
    if failures:
        print(f"stein-check: {failures} of {len(rows)} cases violated a bound", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# rate
# ---------------------------------------------------------------------------

def cmd_rate(config: dict) -> int:
    dimension = config["dimension"]
    if dimension not in (1, 2, 3):
        raise CliError(f"dimension must be 1, 2 or 3, got {dimension!r}")
    c = _require_positive(config, "c")
    grid = config["lambda_grid"]
    if not isinstance(grid, list) or not grid:
        raise CliError("lambda_grid must be a nonempty list")
    values = []
    for lam in grid:
        if not isinstance(lam, (int, float)) or lam <= 0:
            raise CliError(f"intensities must be positive, got {lam!r}")
        values.append(float(lam))
    if any(b <= a for a, b in zip(values, values[1:])):
        raise CliError("lambda_grid must be strictly increasing")
    reps = config["reps"]
    if not isinstance(reps, int) or reps < 100:
        raise CliError(f"reps must be an integer >= 100, got {reps!r}")

    result = rate_experiment(
        dimension,
        c,
        values,
        reps,
        config["seed"],
        workers=config["workers"],
        n_strata=config["n_strata"],
    )
    for failure in result.failures:
        print(f"row lambda={failure.intensity} skipped: {failure.message}", file=sys.stderr)
    text = rate_result_to_csv(result) if config["format"] == "csv" else rate_result_to_json(result)
    _emit(text, config["out"])
    return 0 if result.rows else 1


# ---------------------------------------------------------------------------
# contraction
# ---------------------------------------------------------------------------

def random_symmetric_kernel(
    space: DiscretizedSpace, order: int, rng: np.random.Generator
) -> DiscretizedKernel:
    """Symmetrized standard-normal tensor on the space."""
    values = rng.standard_normal((space.size,) * order)
    from .chaos import symmetrize

    return symmetrize(DiscretizedKernel(order=order, values=values, space=space))


def random_indicator_kernel(
    space: DiscretizedSpace, order: int, rng: np.random.Generator, fill: float = 0.3
) -> DiscretizedKernel:
    """(indicator of a random symmetric set) / order! on the space."""
    import itertools

    raw = rng.random((space.size,) * order) < fill
    sym = np.zeros_like(raw)
    for perm in itertools.permutations(range(order)):
        sym |= np.transpose(raw, perm)
    values = sym.astype(float) / math.factorial(order)
    return DiscretizedKernel(order=order, values=values, space=space)


def _condition_csv(kernels, labels, q: int) -> str:
    reports = poisson_limit_conditions(kernels, labels)
    star_keys = [(r, l) for r in range(1, q + 1) for l in range(1, min(r, q - 1) + 1)]
    header = (
        ["label", "order", "l2", "l4"]
        + [f"star_r{r}_l{l}" for r, l in star_keys]
        + [f"flat_r{r}" for r in range(1, q + 1)]
        + ["moment_gap", "max_abs", "support_cells", "fubini_gap"]
    )
    lines = [",".join(header)]
    for kernel, report in zip(kernels, reports):
        gap = fubini_check(kernel, kernel, 1)
        cells = (
            [report.label, str(report.order), repr(report.l2_norm), repr(report.l4_norm)]
            + [repr(report.contraction_norms[k]) for k in star_keys]
            + [repr(report.flat_norms[r]) for r in range(1, q + 1)]
            + [repr(report.moment_gap), repr(report.max_abs), str(report.support_cells), repr(gap)]
        )
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_contraction(config: dict) -> int:
    n = config["n"]
    q = config["q"]
    if not isinstance(n, int) or n < 2 or n > 30:
        raise CliError(f"n must be an integer in 2..30 (dense desk-scale guard), got {n!r}")
    if not isinstance(q, int) or q < 1 or q > 3:
        raise CliError(f"q must be 1, 2 or 3 (dense desk-scale guard), got {q!r}")
    family = config["family"]
    rng = np.random.default_rng(config["seed"])
    space = DiscretizedSpace(
        points=np.linspace(-0.5, 0.5, n).reshape(-1, 1), weights=np.full(n, 1.0 / n)
    )
    if family == "random":
        count = config["count"]
        if not isinstance(count, int) or count < 1:
            raise CliError(f"count must be a positive integer, got {count!r}")
        kernels = [random_symmetric_kernel(space, q, rng) for _ in range(count)]
        labels = [f"random{i}" for i in range(count)]
    elif family == "indicator":
        count = config["count"]
        kernels = [random_indicator_kernel(space, q, rng, config["fill"]) for _ in range(count)]
        labels = [f"indicator{i}" for i in range(count)]
    elif family == "gilbert":
        if q != 2:
            raise CliError("the gilbert family is a second-order kernel family (q must be 2)")
        c = _require_positive(config, "c")
        kernels = []
        labels = []
        for lam in config["lambdas"]:
            delta = calibrate_delta(1, float(lam), 0.5 * c)
            kernels.append(discretized_edge_kernel(delta, float(lam), cells=n))
            labels.append(f"lambda{lam:g}")
    else:
        raise CliError(f"unknown family {family!r} (expected random, indicator or gilbert)")
    _emit(_condition_csv(kernels, labels, q), config["out"])
    return 0


# ---------------------------------------------------------------------------
# sanity
# ---------------------------------------------------------------------------

class _AsymmetricPair:
    """Deliberately asymmetric second-order kernel used by the negative test."""

    def __init__(self, base_fn):
        self.base_fn = base_fn

    def __call__(self, x, y):
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        tilt = 0.1 * (x[:, None, 0] > y[None, :, 0])
        return self.base_fn(x, y) + tilt


def cmd_sanity(config: dict) -> int:
    dimension = config["dimension"]
    if dimension not in (1, 2):
        raise CliError(f"sanity checks run in dimension 1 or 2, got {dimension!r}")
    reps = config["reps"]
    if not isinstance(reps, int) or reps < 100:
        raise CliError(f"reps must be an integer >= 100, got {reps!r}")
    intensity = _require_positive(config, "intensity")
    rule = _parse_rule(config["rule"], dimension)
    box = config["box"]
    if not isinstance(box, list) or len(box) != dimension:
        raise CliError("box must list one [low, high] pair per axis")
    box_t = tuple((float(lo), float(hi)) for lo, hi in box)
    window = Window.unit(dimension)
    seed = config["seed"]
    workers = config["workers"]
    inject = config.get("inject")
    if inject not in (None, "asymmetric_g2"):
        raise CliError(f"unknown inject option {inject!r}")

    checks: list[tuple[str, bool, str]] = []

    # zero bound for the box count
    eta = count_functional(box_t, intensity, window)
    mass = intensity * box_volume(box_t)
    arrays = _replication_arrays(eta, min(reps, 2000), seed, row_key=0,
                                 workers=workers, n_strata=config["n_strata"])
    zero_ok = bool(np.all(arrays["cdc"] == mass) and np.all(arrays["t2"] == 0.0))
    checks.append(("box-count-zero-bound", zero_ok,
                   f"max |cdc - mass| = {float(np.max(np.abs(arrays['cdc'] - mass)))!r}"))

    # variance identity for the edge count
    F = edge_functional(rule, intensity)
    vc = variance_check(F, reps, seed, workers=workers, n_strata=config["n_strata"])
    checks.append(("variance-identity", abs(vc.z_score) <= 3.0,
                   f"var={vc.var_mc:.6g} cdc={vc.cdc_mean:.6g} z={vc.z_score:.3f}"))

    # chaotic reconstruction (optionally broken on purpose)
    chaos = F.chaos
    if inject == "asymmetric_g2":
        from dataclasses import replace

        chaos = replace(chaos, g2=replace(chaos.g2, fn=_AsymmetricPair(chaos.g2.fn)))
    tol = 1e-10 if dimension == 1 else 1e-6
    worst = 0.0
    n_configs = min(config["recon_configs"], reps)
    for i in range(n_configs):
        cfg = sample_process(window, intensity, RngStream(seed, (90, i)))
        worst = max(worst, abs(evaluate_chaos(chaos, cfg) - edge_count(cfg, rule)))
    checks.append(("chaotic-reconstruction", worst <= tol, f"max |gap| = {worst!r}"))

    # difference operator vs chaos derivative
    pair_fail = 0
    gen = np.random.default_rng(seed)
    for i in range(config["pair_checks"]):
        cfg = sample_process(window, intensity, RngStream(seed, (91, i)))
        z = gen.uniform(window.lows, window.highs)
        if diff(F, cfg, z) != diff_chaos(F, cfg, z):
            pair_fail += 1
    checks.append(("add-one-cost-identity", pair_fail == 0, f"{pair_fail} mismatches"))

    lines = []
    failed = []
    for name, ok, detail in checks:
        lines.append(f"{name}: {'pass' if ok else 'FAIL'} ({detail})")
        if not ok:
            failed.append(name)
    _emit("\n".join(lines) + "\n", config["out"])
    if failed:
        print("sanity: failed checks: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# sample / occupation
# ---------------------------------------------------------------------------

def cmd_sample(config: dict) -> int:
    dimension = config["dimension"]
    if dimension not in (1, 2, 3):
        raise CliError(f"dimension must be 1, 2 or 3, got {dimension!r}")
    intensity = config["intensity"]
    if not isinstance(intensity, (int, float)) or intensity < 0:
        raise CliError(f"intensity must be nonnegative, got {intensity!r}")
    stream_id = config["stream"]
    if not isinstance(stream_id, int) or stream_id < 0:
        raise CliError(f"stream must be a nonnegative integer, got {stream_id!r}")
    cfg = sample_process(
        Window.unit(dimension), float(intensity), RngStream(config["seed"], stream_id)
    )
    _emit(configuration_to_text(cfg, float(intensity)), config["out"])
    return 0


def cmd_occupation(config: dict) -> int:
    dimension = config["dimension"]
    if dimension not in (1, 2, 3):
        raise CliError(f"dimension must be 1, 2 or 3, got {dimension!r}")
    resolution = config["resolution"]
    if not isinstance(resolution, int) or resolution < 64 or resolution % 4:
        raise CliError(f"resolution must be an integer >= 64 divisible by 4, got {resolution!r}")
    rule = _parse_rule(config["rule"], dimension)
    report = occupation(rule, resolution)
    payload = {
        "psi": report.psi,
        "psi_hat": report.psi_hat,
        "psi_check": report.psi_check,
        "ratio": report.ratio if math.isfinite(report.ratio) else None,
        "exact": report.exact,
    }
    if config["format"] == "csv":
        keys = list(payload)
        text = ",".join(keys) + "\n" + ",".join(repr(payload[k]) for k in keys) + "\n"
    else:
        text = json.dumps(payload, indent=2) + "\n"
    _emit(text, config["out"])
    return 0


COMMANDS = {
    "stein-check": cmd_stein_check,
    "rate": cmd_rate,
    "contraction": cmd_contraction,
    "sanity": cmd_sanity,
    "sample": cmd_sample,
    "occupation": cmd_occupation,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chenstein",
        description="Poisson-approximation experiments for Poisson functionals",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="master seed (mandatory here or in the config)")
        p.add_argument("--workers", type=int, default=1, help="replication worker processes")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (value parsed as JSON)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.command, args)
        return COMMANDS[args.command](config)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line experiment driver.

    hybriddft <experiment> --config <path> [--out <dir>] [--seed <u64>] [--ensemble <k>]

Experiments: run, sweep-damping, compare, approx-error, mu-track.  Each writes
CSV files plus ``manifest.json`` into the output directory.  Exit status is 0 on
success, 2 when every SCF run ended with the divergence flag, 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .cheb import cheb_coefficients, measured_error
from .grid import Grid
from .hamiltonian import AtomSystem, rescale, spectral_bounds
from .oracle import ground_truth, optimal_damping
from .qest import BornShots, BoundedNoise, Exact
from .scf import TRACE_COLUMNS, ScfConfig, jacobian_fd, run_scf, stability_threshold
from .toymodels import KohnShamSystem, make_chain, make_frozen, make_linear_surrogate

EXPERIMENTS = ("run", "sweep-damping", "compare", "approx-error", "mu-track")
CSV_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(x.strip().lower() for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        low = text.strip().lower()
        if low not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return low

    return parse


def _open(lo: float, hi: float, closed_hi: bool = False, closed_lo: bool = False):
    def check(x):
        values = x if isinstance(x, tuple) else (x,)
        ok = all((lo <= v if closed_lo else lo < v) and (v <= hi if closed_hi else v < hi) for v in values)
        left = "[" if closed_lo else "("
        right = "]" if closed_hi else ")"
        return None if ok else f"must lie in {left}{lo:g}, {hi:g}{right}"

    return check


def _positive(x):
    values = x if isinstance(x, tuple) else (x,)
    return None if all(v > 0 for v in values) else "must be positive"


def _at_least(k):
    def check(x):
        values = x if isinstance(x, tuple) else (x,)
        return None if all(v >= k for v in values) else f"must be >= {k}"

    return check


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str
    check: Callable[[Any], str | None] | None = None


KEYS: dict[str, Key] = {
    # system
    "experiment": Key(_choice(*EXPERIMENTS), None, "experiment (the command-line argument takes precedence)"),
    "system": Key(_choice("chain", "atoms", "surrogate"), "chain", "toy system: chain, atoms or surrogate"),
    "frozen": Key(_bool, False, "freeze the Hamiltonian at the initial density"),
    "n_atoms": Key(int, 8, "chain: number of atoms", _at_least(1)),
    "charges": Key(_floats, None, "atomic charges (chain default alternates 3, 1)", _positive),
    "width": Key(float, 1.0, "chain: Gaussian pseudocharge width", _positive),
    "jitter": Key(float, 0.0, "chain: largest random atom displacement (Bohr)", lambda j: None if j >= 0 else "must be >= 0"),
    "jitter_seed": Key(int, 0, "chain: seed of the atom displacements", _at_least(0)),
    "widths": Key(_floats, None, "atoms: per-atom Gaussian widths (default 1.0)", _positive),
    "positions": Key(_floats, None, "atoms: flattened coordinates, dims values per atom"),
    "dims": Key(int, 1, "atoms: spatial dimension", lambda d: None if d in (1, 2, 3) else "must be 1, 2 or 3"),
    "points": Key(_ints, (256,), "fine grid points per axis", _at_least(1)),
    "length": Key(_floats, (32.0,), "box length per axis (Bohr)", _positive),
    "bc": Key(_words, ("periodic",), "boundary condition per axis: periodic or dirichlet"),
    "stride": Key(_ints, (4,), "coarse-grid stride per axis", _at_least(1)),
    "order": Key(int, 2, "finite-difference order (2 or 4)", lambda o: None if o in (2, 4) else "must be 2 or 4"),
    "beta": Key(float, 10.0, "inverse temperature", _positive),
    "n_electrons": Key(float, None, "electron count (default: total charge)", _positive),
    # surrogate
    "n_coords": Key(int, 64, "surrogate: number of coordinates", _at_least(1)),
    "target_c": Key(float, 0.9, "surrogate: contraction factor of the damped map", _open(0, 1, closed_lo=True)),
    "surrogate_a": Key(float, None, "surrogate: damping at which the contraction equals target_c (default: a)", _open(0, 1, closed_hi=True)),
    "shot_scale": Key(float, 1.0, "surrogate: size of a single emulated shot", _positive),
    # scf
    "mode": Key(_choice("fcfp", "rbcfp"), "fcfp", "fcfp or rbcfp"),
    "a": Key(float, 0.3, "damping a", _open(0, 1, closed_hi=True)),
    "m": Key(int, None, "rbcfp block size (default N_I)", _at_least(1)),
    "mu_mode": Key(_choice("fixed", "constrained"), "fixed", "fixed or constrained chemical potential"),
    "mu": Key(float, None, "fixed chemical potential (default: bisection on the initial Hamiltonian)"),
    "eta": Key(float, 0.1, "chemical-potential damping eta", _open(0, 1)),
    "tol": Key(float, 1e-6, "relative-error stopping threshold", _positive),
    "max_iter": Key(int, 1000, "iteration cap", _at_least(1)),
    "eps_poly": Key(float, 1e-8, "Chebyshev sup-norm error target", _open(0, 1)),
    "degree": Key(int, None, "fixed Chebyshev degree (default: chosen from eps_poly)", _at_least(0)),
    "bounds": Key(_choice("gershgorin", "lanczos"), "gershgorin", "spectral bounds method"),
    "noise": Key(_choice("exact", "born", "bounded"), "exact", "estimator noise model"),
    "shots": Key(int, 1000, "Born shots per coordinate", _at_least(1)),
    "eps_est": Key(float, 1e-3, "bounded-noise accuracy", _positive),
    "delta_fail": Key(float, 1e-3, "bounded-noise failure probability", _open(0, 1)),
    "seed": Key(int, 0, "random seed", _at_least(0)),
    "reference": Key(str, "none", "reference density: none, oracle, or a file path (.npy or text)"),
    # experiments
    "sweep_a": Key(_floats, tuple(round(0.05 * k, 2) for k in range(1, 21)), "sweep-damping: damping grid", _open(0, 1, closed_hi=True)),
    "compare_a_fcfp": Key(float, None, "compare: FCFP damping (default: the Jacobian optimum)", _open(0, 1, closed_hi=True)),
    "compare_a_rbcfp": Key(_floats, (0.95,), "compare: large dampings run with RBCFP and FCFP", _open(0, 1, closed_hi=True)),
    "compare_m": Key(_ints, (1,), "compare: RBCFP block sizes", _at_least(1)),
    "compare_tol": Key(float, 1e-4, "compare: target relative error", _positive),
    "compare_budget": Key(int, 100_000, "compare: coordinate-evaluation budget per run", _at_least(1)),
    "degrees": Key(_ints, (50, 200, 500), "approx-error: polynomial degrees", _at_least(0)),
}


@dataclass
class RunConfig:
    values: dict[str, Any]
    lines: dict[str, int] = field(default_factory=dict)
    out: Path = Path("out")
    ensemble: int = 1
    base_dir: Path = Path(".")

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def experiment(self) -> str | None:
        return self.values["experiment"]

    def scf_config(self, **overrides) -> ScfConfig:
        v = self.values
        noise = {
            "exact": Exact(v["seed"]),
            "born": BornShots(v["shots"], v["seed"]),
            "bounded": BoundedNoise(v["eps_est"], v["delta_fail"], v["seed"]),
        }[v["noise"]]
        cfg = ScfConfig(
            mode=v["mode"],
            damping=v["a"],
            block_size=v["m"],
            mu_mode=v["mu_mode"],
            mu=v["mu"],
            eta=v["eta"],
            n_electrons=v["n_electrons"],
            tol=v["tol"],
            max_iter=v["max_iter"],
            eps_poly=v["eps_poly"],
            degree=v["degree"],
            bounds_method=v["bounds"],
            noise=noise,
            seed=v["seed"],
        )
        return replace(cfg, **overrides)

    def with_seed(self, seed: int) -> RunConfig:
        return replace(self, values={**self.values, "seed": seed})


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    """Parse a flat ``key = value`` file with ``#`` comments; unknown keys are errors."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} repeated (first set on line {lines[key]})")
        entry = KEYS[key]
        try:
            parsed = entry.parse(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: key {key!r}: {exc}") from None
        if entry.check is not None:
            problem = entry.check(parsed)
            if problem:
                raise ConfigError(f"line {lineno}: key {key!r} {problem}, got {value}")
        values[key] = parsed
        lines[key] = lineno
    for key, entry in KEYS.items():
        values.setdefault(key, entry.default)
    cfg = RunConfig(values, lines, base_dir=Path(base_dir))
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: RunConfig) -> None:
    v = cfg.values

    def fail(key, message):
        where = f"line {cfg.lines[key]}: " if key in cfg.lines else ""
        raise ConfigError(f"{where}key {key!r} {message}")

    if v["system"] == "atoms":
        d = v["dims"]
        for key in ("points", "length", "bc", "stride"):
            if len(v[key]) not in (1, d):
                fail(key, f"needs 1 or {d} entries")
        if v["positions"] is None or v["charges"] is None:
            fail("positions", "and 'charges' are required for system = atoms")
        if len(v["positions"]) != d * len(v["charges"]):
            fail("positions", f"needs {d} coordinates per atom")
    for b in v["bc"]:
        if b not in ("periodic", "dirichlet"):
            fail("bc", f"has unknown boundary condition {b!r}")
    ref = v["reference"]
    if ref not in ("none", "oracle") and not (cfg.base_dir / ref).exists():
        fail("reference", f"file {ref!r} does not exist")
    if v["system"] == "surrogate" and v["mu_mode"] == "constrained":
        fail("mu_mode", "constrained needs a Kohn-Sham system")


# ----------------------------------------------------------------------------- systems


def _per_axis(values, dims):
    return tuple(values) if len(values) == dims else tuple(values) * dims


def build_system(cfg: RunConfig):
    v = cfg.values
    if v["system"] == "surrogate":
        return make_linear_surrogate(
            v["n_coords"], v["target_c"], v["seed"], v["surrogate_a"] or v["a"], v["shot_scale"]
        )
    if v["system"] == "chain":
        system = make_chain(
            v["n_atoms"],
            v["length"][0],
            v["points"][0],
            v["beta"],
            v["charges"],
            v["width"],
            v["stride"][0],
            v["n_electrons"],
            v["order"],
            v["jitter"],
            v["jitter_seed"],
        )
    else:
        d = v["dims"]
        grid = Grid(
            _per_axis(v["points"], d), _per_axis(v["length"], d), _per_axis(v["bc"], d), _per_axis(v["stride"], d)
        )
        positions = np.asarray(v["positions"]).reshape(-1, d)
        widths = v["widths"] if v["widths"] is not None else 1.0
        atoms = AtomSystem(positions, v["charges"], np.asarray(widths))
        system = KohnShamSystem(grid, atoms, v["beta"], v["order"], v["n_electrons"])
    return make_frozen(system) if v["frozen"] else system


def load_reference(cfg: RunConfig, system) -> tuple[np.ndarray | None, float | None]:
    """Reference density and the chemical potential that goes with it."""
    ref = cfg["reference"]
    if ref == "none":
        return None, cfg["mu"]
    if ref == "oracle":
        if cfg["system"] == "surrogate":
            return system.fixed_point, 0.0
        if cfg["mu_mode"] == "constrained" or cfg["mu"] is None:
            return ground_truth(system, constrained=True)
        return ground_truth(system, mu=cfg["mu"])
    path = cfg.base_dir / ref
    data = np.load(path) if path.suffix == ".npy" else np.loadtxt(path)
    data = np.atleast_1d(np.asarray(data, dtype=float)).ravel()
    if len(data) != system.n_coarse:
        raise ConfigError(f"reference file has {len(data)} values, the system has {system.n_coarse} coordinates")
    return data, cfg["mu"]


# ----------------------------------------------------------------------------- output


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else "%.17g" % x
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# schema {CSV_SCHEMA_VERSION}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(x) for x in row) + "\n")


def trace_rows(trace, extra=()):
    for rec in trace.records:
        yield tuple(extra) + tuple(getattr(rec, c) for c in TRACE_COLUMNS)


# ----------------------------------------------------------------------------- experiments


@dataclass
class Outcome:
    files: list[str] = field(default_factory=list)
    statuses: list[str] = field(default_factory=list)
    notes: dict[str, Any] = field(default_factory=dict)


def _run_traces(cfg: RunConfig, name: str, outcome: Outcome, **overrides) -> None:
    for member in range(cfg.ensemble):
        c = cfg.with_seed(cfg["seed"] + member)
        system = build_system(c)
        reference, mu = load_reference(c, system)
        scf = c.scf_config(**overrides)
        if scf.mu is None and mu is not None:
            scf = replace(scf, mu=mu)
        trace = run_scf(scf, system, reference=reference)
        fname = f"{name}.csv" if cfg.ensemble == 1 else f"{name}_seed{c['seed']}.csv"
        write_csv(cfg.out / fname, ["status", *TRACE_COLUMNS], trace_rows(trace, (trace.status,)))
        outcome.files.append(fname)
        outcome.statuses.append(trace.status)


def experiment_run(cfg: RunConfig, outcome: Outcome) -> None:
    _run_traces(cfg, "trace", outcome)


def experiment_mu_track(cfg: RunConfig, outcome: Outcome) -> None:
    if cfg["system"] == "surrogate":
        raise ConfigError("mu-track needs a Kohn-Sham system")
    _run_traces(cfg, "mu_track", outcome, mu_mode="constrained")


def experiment_sweep(cfg: RunConfig, outcome: Outcome) -> None:
    system = build_system(cfg)
    reference, mu = load_reference(cfg, system)
    base = cfg.scf_config(mode="fcfp")
    if base.mu is None and mu is not None:
        base = replace(base, mu=mu)
    if base.mu is None:
        base = replace(base, mu=system.initial_mu(system.initial_density()))
    if reference is not None and cfg["mu_mode"] == "fixed" and cfg["system"] != "surrogate":
        jac = jacobian_fd(system, reference, mu=base.mu, cfg=base)
        outcome.notes["jacobian_threshold"] = stability_threshold(jac)
    elif cfg["system"] == "surrogate":
        outcome.notes["jacobian_threshold"] = stability_threshold(system.jacobian)
    rows = []
    for a in cfg["sweep_a"]:
        trace = run_scf(replace(base, damping=a), system, reference=reference)
        label = {"converged": "converged", "diverged": "DIVERGED", "max_iter": "MAXITER"}[trace.status]
        rows.append((a, label, trace.iterations if trace.converged else "", trace.records[-1].error))
        outcome.statuses.append(trace.status)
    write_csv(cfg.out / "sweep.csv", ["a", "outcome", "iterations", "final_error"], rows)
    outcome.files.append("sweep.csv")


def experiment_compare(cfg: RunConfig, outcome: Outcome) -> None:
    system = build_system(cfg)
    reference, mu = load_reference(cfg, system)
    if reference is None:
        reference, mu = load_reference(replace(cfg, values={**cfg.values, "reference": "oracle"}), system)
    base = cfg.scf_config(tol=cfg["compare_tol"])
    if base.mu is None:
        base = replace(base, mu=mu if mu is not None else system.initial_mu(system.initial_density()))
    if cfg["system"] == "surrogate":
        jac = system.jacobian
    else:
        jac = jacobian_fd(system, reference, mu=base.mu, dense=True)
    outcome.notes["optimal_damping"] = optimal_damping(jac)
    outcome.notes["jacobian_threshold"] = stability_threshold(jac)
    a_fcfp = cfg["compare_a_fcfp"]
    if a_fcfp is None:
        a_fcfp = outcome.notes["optimal_damping"]
    n_coords = system.n_coarse
    runs = [("fcfp", a_fcfp, n_coords)]
    for a in cfg["compare_a_rbcfp"]:
        runs += [("rbcfp", a, m) for m in cfg["compare_m"]] + [("fcfp", a, n_coords)]
    rows, summary = [], []
    for member in range(cfg.ensemble):
        seed = cfg["seed"] + member
        noise = replace(base.noise, seed=seed)
        for mode, a, m in runs:
            max_iter = max(1, cfg["compare_budget"] // m)
            block = m if mode == "rbcfp" else None
            scf = replace(base, mode=mode, damping=a, block_size=block, max_iter=max_iter, noise=noise, seed=seed)
            trace = run_scf(scf, system, reference=reference)
            for rec in trace.records:
                rows.append((seed, mode, a, m, rec.k, rec.evaluations, rec.error, rec.queries))
            hit = trace.column("error") < cfg["compare_tol"]
            evals = int(trace.column("evaluations")[np.argmax(hit)]) if hit.any() else ""
            summary.append((seed, mode, a, m, trace.status, evals, trace.records[-1].error))
            outcome.statuses.append(trace.status)
    write_csv(cfg.out / "compare.csv", ["seed", "mode", "a", "m", "k", "evaluations", "error", "queries"], rows)
    write_csv(
        cfg.out / "compare_summary.csv",
        ["seed", "mode", "a", "m", "status", "evaluations_to_tol", "final_error"],
        summary,
    )
    outcome.files += ["compare.csv", "compare_summary.csv"]


def experiment_approx_error(cfg: RunConfig, outcome: Outcome) -> None:
    if cfg["system"] == "surrogate":
        raise ConfigError("approx-error needs a Kohn-Sham system")
    system = build_system(cfg)
    n0 = system.initial_density()
    mu = cfg["mu"] if cfg["mu"] is not None else system.initial_mu(n0)
    h = system.hamiltonian(n0)
    res = rescale(h, spectral_bounds(h, cfg["bounds"], seed=cfg["seed"]), system.beta, mu)
    rows = []
    for degree in cfg["degrees"]:
        exp = cheb_coefficients(res.beta_hat, res.log_c, degree)
        rows.append((degree, res.beta_hat, res.log_c, measured_error(exp), exp.certified_bound))
    write_csv(cfg.out / "approx_error.csv", ["degree", "beta_hat", "log_c", "measured_error", "certified_bound"], rows)
    outcome.files.append("approx_error.csv")


RUNNERS = {
    "run": experiment_run,
    "sweep-damping": experiment_sweep,
    "compare": experiment_compare,
    "approx-error": experiment_approx_error,
    "mu-track": experiment_mu_track,
}


def run_experiment(cfg: RunConfig, experiment: str | None = None) -> int:
    experiment = experiment or cfg.experiment
    if experiment not in RUNNERS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    outcome = Outcome()
    RUNNERS[experiment](cfg, outcome)
    manifest = {
        "tool": "hybriddft",
        "version": __version__,
        "csv_schema": CSV_SCHEMA_VERSION,
        "experiment": experiment,
        "seed": cfg["seed"],
        "ensemble": cfg.ensemble,
        "seeds": [cfg["seed"] + k for k in range(cfg.ensemble)],
        "config": {k: _jsonable(v) for k, v in sorted(cfg.values.items())},
        "files": outcome.files,
        "statuses": outcome.statuses,
        **{k: _jsonable(v) for k, v in outcome.notes.items()},
    }
    with open(cfg.out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if outcome.statuses and "converged" not in outcome.statuses and "diverged" in outcome.statuses:
        return 2
    return 0


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(format_value(float(v))) if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _help_epilog() -> str:
    lines = ["config keys (key = value, '#' starts a comment):"]
    for name, key in KEYS.items():
        default = key.default
        if isinstance(default, tuple):
            shown = ", ".join(str(x) for x in default)
        else:
            shown = "-" if default is None else str(default).lower()
        lines.append(f"  {name:16s} {key.help} [default: {shown}]")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybriddft",
        description="Simulate Chebyshev/noisy-estimator SCF iterations on toy Kohn-Sham systems.",
        epilog=_help_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, type=Path, help="flat key = value config file")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory [default: out]")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed (unsigned 64-bit)")
    parser.add_argument("--ensemble", type=int, default=1, help="independent seeded runs [default: 1]")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.ensemble < 1:
            raise ConfigError("--ensemble must be >= 1")
        text = args.config.read_text(encoding="utf-8")
        cfg = parse_config(text, base_dir=args.config.parent)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        cfg = replace(cfg, out=args.out, ensemble=args.ensemble)
        return run_experiment(cfg, args.experiment)
    except (ConfigError, OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"hybriddft: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

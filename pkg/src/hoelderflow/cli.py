"""Command-line batch runner: JSON config in, deterministic result files out."""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import catalog, fields, fraccalc, linops, paths, solver, stability
from .errors import ConfigurationError, HoelderflowError, HypothesisError, StabilityError

log = logging.getLogger("hoelderflow")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
JOBS_ENV = "HOELDERFLOW_JOBS"
REQUIRED = object()

_COMMON = {"output_dir": "results", "seeds": [0], "replicas": 1}
_DRIVER = {"hurst": 0.75, "q_matrix": None, "beta_prime": None, "method": "circulant"}

SCHEMAS: dict[str, dict[str, Any]] = {
    "sample-fbm": {**_DRIVER, "horizon": 1.0, "steps": 1024},
    "integrate": {**_DRIVER, "horizon": 1.0, "steps": 4096, "integrand": "driver",
                  "s": 0.0, "t": 1.0, "alpha": None},
    "solve": {**_DRIVER, "field": REQUIRED, "horizon": 1.0, "steps_per_unit": 1024,
              "u0": REQUIRED, "scheme": "euler", "beta": None, "allow_blowup": False},
    "doss": {**_DRIVER, "lambda": 1.0, "mu": 0.5, "gamma": 0.5, "drift": "sine",
             "horizon": 50.0, "steps_per_unit": 1024, "u0": 1.0},
    "stability": {**_DRIVER, "field": REQUIRED, "lambda": 1.0, "eps": 0.5, "eps_hat": None,
                  "beta": 0.6, "beta_prime": 0.73, "alpha": None, "n_intervals": 30,
                  "steps_per_unit": 1024, "u0": REQUIRED, "neighborhood": False},
    "gronwall": {"sequence_file": REQUIRED, "zeta0": REQUIRED, "k": REQUIRED, "lambda": REQUIRED,
                 "eps": REQUIRED, "eps_hat": REQUIRED},
    "report": {"inputs": REQUIRED},
}
STOCHASTIC = {"sample-fbm", "integrate", "solve", "doss", "stability"}


class NumericFailure(HoelderflowError):
    """A run ended in a state the configuration does not permit (exit status 3)."""


def _locate(text: str, key: str) -> int | None:
    needle = json.dumps(key)
    for no, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return no
    return None


def _config_error(text: str, key: str, msg: str) -> ConfigurationError:
    line = _locate(text, key)
    where = f"line {line}: " if line else ""
    return ConfigurationError(f"{where}{key!r}: {msg}")


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    payload: dict
    output_dir: str = "results"
    seeds: tuple = (0,)
    replicas: int = 1
    base_dir: str = field(default=".", compare=False)

    def to_json(self) -> str:
        doc = {"subcommand": self.subcommand, "output_dir": self.output_dir,
               "seeds": list(self.seeds), "replicas": self.replicas, **self.payload}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str, subcommand: str | None = None, base_dir: str = ".") -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError("line 1: configuration must be a JSON object")
        name = doc.pop("subcommand", subcommand)
        if subcommand is not None and name != subcommand:
            raise _config_error(text, "subcommand", f"config is for {name!r}, not {subcommand!r}")
        if name not in SCHEMAS:
            raise _config_error(text, "subcommand", f"unknown subcommand {name!r}")
        schema = SCHEMAS[name]
        common = {k: doc.pop(k, v) for k, v in _COMMON.items()}
        for key in doc:
            if key not in schema:
                raise _config_error(text, key, f"unknown key for {name}")
        payload = {}
        for key, default in schema.items():
            if key in doc:
                payload[key] = doc[key]
            elif default is REQUIRED:
                raise ConfigurationError(f"missing required key {key!r} for {name}")
            else:
                payload[key] = default
        seeds = common["seeds"]
        if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise _config_error(text, "seeds", "must be a list of integers")
        if name in STOCHASTIC and not seeds:
            raise _config_error(text, "seeds", "must be non-empty")
        if any(s < 0 or s >= 2**64 for s in seeds):
            raise _config_error(text, "seeds", "must be 64-bit unsigned integers")
        replicas = common["replicas"]
        if not isinstance(replicas, int) or replicas < 1:
            raise _config_error(text, "replicas", "must be a positive integer")
        cfg = cls(name, payload, str(common["output_dir"]), tuple(seeds), replicas, base_dir)
        _validate_payload(cfg, text)
        return cfg

    def with_overrides(self, output_dir: str | None = None, seeds: list[int] | None = None) -> "ExperimentConfig":
        return ExperimentConfig(self.subcommand, self.payload,
                                self.output_dir if output_dir is None else output_dir,
                                self.seeds if seeds is None else tuple(seeds), self.replicas, self.base_dir)


def _validate_payload(cfg: ExperimentConfig, text: str) -> None:
    p = cfg.payload
    try:
        if "hurst" in p:
            paths.FbmConfig(p["hurst"], _q(p), 1.0, 1, 0, p["method"])
        if "field" in p:
            _field_from(p["field"])
        if cfg.subcommand == "integrate" and p["integrand"] not in fraccalc.INTEGRANDS:
            raise _config_error(text, "integrand", f"unknown integrand {p['integrand']!r}")
        if cfg.subcommand == "solve" and p["scheme"] not in ("euler", "mild"):
            raise _config_error(text, "scheme", "must be 'euler' or 'mild'")
        if cfg.subcommand == "doss" and p["drift"] not in DOSS_DRIFTS:
            raise _config_error(text, "drift", f"unknown drift {p['drift']!r}")
        if cfg.subcommand == "stability":
            params = _stability_params(p)
            pair = _field_from(p["field"])
            try:
                pair.check_local_assumptions()
                lin = fields.split_linearization(pair, validate=False)
                linops.StableMatrix(lin.a, params.lam)
            except (HypothesisError, StabilityError) as exc:
                raise _config_error(text, "field", str(exc)) from exc
    except KeyError as exc:
        key = exc.args[0]
        raise _config_error(text, "name", f"unknown field-catalog name {key!r}") from exc
    except ConfigurationError as exc:
        if str(exc).startswith("line "):
            raise
        key = next((k for k in sorted(p, key=len, reverse=True) if k in str(exc)), None) or "field"
        raise _config_error(text, key, str(exc)) from exc


def _q(p: dict) -> np.ndarray:
    q = p.get("q_matrix")
    return np.eye(1) if q is None else np.atleast_2d(np.asarray(q, dtype=float))


def _field_from(spec: Any) -> fields.FieldPair:
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigurationError("field must be an object with a 'name'")
    return catalog.build(spec["name"], **spec.get("params", {}))


def _stability_params(p: dict, u0=None) -> stability.StabilityParams:
    eh = p["eps_hat"]
    if eh is None:
        eh = stability.eps_hat_max(p["lambda"], p["eps"])
    return stability.StabilityParams(p["lambda"], p["eps"], eh, p["beta"], p["beta_prime"], p["alpha"],
                                     p["n_intervals"], p["u0"] if u0 is None else u0, p["steps_per_unit"])


DOSS_DRIFTS = {"sine": solver.make_sine_drift, "zero": None}


# -- per-instance workers -----------------------------------------------------------------


def _fmt(x) -> str:
    x = float(x)
    return format(x, ".17g") if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def _driver(p: dict, seed: int, horizon: float, steps: int) -> paths.SampledPath:
    cfg = paths.FbmConfig(p["hurst"], _q(p), horizon, steps, seed, p["method"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return paths.fbm_sample(cfg, p["beta_prime"])


def _clean(obj):
    # non-finite floats become the strings "nan", "inf", "-inf"
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else _fmt(obj)
    return obj


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_clean(doc), sort_keys=True, indent=1, allow_nan=False) + "\n")


def _tag(seed: int, rep: int, replicas: int) -> str:
    return f"{seed}" if replicas == 1 else f"{seed}_r{rep}"


def _run_sample(p, seed, tag, out: Path) -> dict:
    path = _driver(p, seed, p["horizon"], p["steps"])
    paths.save_path(path, out / f"path_{tag}.csv", out / f"path_{tag}.json")
    return {"final_norm": float(np.linalg.norm(path.values[-1])), "fallback": path.metadata["fallback"]}


def _run_integrate(p, seed, tag, out: Path) -> dict:
    om = _driver(p, seed, p["horizon"], p["steps"])
    g = fraccalc.integrand_by_name(p["integrand"], om)
    rs = fraccalc.young_integral_rs(g, om, p["s"], p["t"])
    fr = fraccalc.young_integral_fracrep(g, om, p["s"], p["t"], p["alpha"])
    bound = fraccalc.young_bound(g, om, p["s"], p["t"], p["alpha"])
    doc = {"rs": rs.value.tolist(), "richardson": rs.richardson.tolist(), "fracrep": fr.tolist(),
           "bound": bound, "last_delta": rs.last_delta,
           "levels": [[s, v.tolist()] for s, v in rs.levels]}
    _write_json(out / f"integral_{tag}.json", doc)
    return {"rs": float(np.linalg.norm(rs.value)), "fracrep": float(np.linalg.norm(fr)), "bound": bound}


def _run_solve(p, seed, tag, out: Path) -> dict:
    pair = _field_from(p["field"])
    steps = int(round(p["horizon"] * p["steps_per_unit"]))
    om = _driver(p, seed, p["horizon"], steps)
    prob = solver.YoungProblem(pair, om, p["u0"], beta=p["beta"])
    if p["scheme"] == "euler":
        traj = solver.solve_euler(prob)
    else:
        traj = solver.solve_mild(fields.split_linearization(pair), prob)
    if traj.blowup and not p["allow_blowup"]:
        raise NumericFailure(f"seed {seed}: solution blew up at step {traj.last_index}")
    traj.save_csv(out / f"trajectory_{tag}.csv")
    traj.save_norms_csv(out / f"norms_{tag}.csv")
    return {"blowup": traj.blowup, "final_norm": float(np.linalg.norm(traj.values[-1]))}


def _run_doss(p, seed, tag, out: Path) -> dict:
    steps = int(round(p["horizon"] * p["steps_per_unit"]))
    om = _driver(p, seed, p["horizon"], steps)
    make = DOSS_DRIFTS[p["drift"]]
    fh = make(p["mu"]) if make is not None else _zero_drift
    prob = solver.DossProblem(p["lambda"], p["gamma"], p["mu"], fh, om, p["u0"])
    traj = solver.doss_solve(prob)
    chk = solver.doss_bound_check(traj, prob)
    if traj.blowup:
        raise NumericFailure(f"seed {seed}: transformed solution overflowed")
    stride = max(1, traj.values.shape[0] // 4096)
    t = traj.times[::stride]
    absu = np.abs(traj.values[::stride, 0])
    bound = absu + chk.slack[::stride]
    u_end = abs(float(traj.values[-1, 0]))
    rate = math.log(u_end) / (traj.times[-1] - traj.t0) if u_end > 0 else -math.inf
    doc = {"kind": "doss", "t": t.tolist(), "abs_u": absu.tolist(), "bound": bound.tolist(),
           "min_slack": chk.min_slack, "log_rate": rate, "lambda": p["lambda"], "mu": p["mu"]}
    _write_json(out / f"doss_{tag}.json", doc)
    return {"min_slack": chk.min_slack, "log_rate": rate}


def _zero_drift(x):
    return 0.0 * x


def _run_stability(p, seed, tag, out: Path) -> dict:
    pair = _field_from(p["field"])
    lin = fields.split_linearization(pair)
    pair.check_local_assumptions()
    kit = fields.CutoffKit.quintic()
    params = _stability_params(p)
    horizon = params.n_intervals + 1
    om = _driver({**p, "beta_prime": params.beta_prime}, seed, horizon, horizon * params.steps_per_unit)
    consts = stability.stability_constants(lin, kit, params)
    radius = math.nan
    if p["neighborhood"]:
        radius = stability.admissible_neighborhood(lin, pair, kit, params, om, consts=consts)
        u0 = np.asarray(params.u0, dtype=float)
        params = params.with_u0(radius * u0 / np.linalg.norm(u0))
    rep = stability.iterate_unit_intervals(lin, pair, kit, params, om, consts=consts)
    doc = rep.to_dict()
    doc["kind"] = "stability"
    doc["neighborhood_radius"] = radius
    _write_json(out / f"report_{tag}.json", doc)
    return {"fitted_rate": rep.fitted_rate, "theorem_rate": rep.theorem_rate,
            "escaped": rep.escaped, "radius": radius}


RUNNERS = {"sample-fbm": _run_sample, "integrate": _run_integrate, "solve": _run_solve,
           "doss": _run_doss, "stability": _run_stability}


def _instance(args) -> dict:
    name, payload, seed, rep, child, tag, out = args
    row = RUNNERS[name](payload, child, tag, Path(out))
    return {"seed": seed, "replica": rep, "instance_seed": child, **row}


def instance_seeds(seed: int, replicas: int) -> list[int]:
    """Seed itself for a single replica, otherwise 64-bit children of ``SeedSequence(seed)``."""
    if replicas == 1:
        return [int(seed)]
    return [int(c.generate_state(1, np.uint64)[0]) for c in np.random.SeedSequence(seed).spawn(replicas)]


# -- orchestration ------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_aggregate(rows: list[dict], path: Path) -> None:
    keys = sorted({k for r in rows for k in r})
    head = ["seed", "replica", "instance_seed"]
    keys = head + [k for k in keys if k not in head]
    lines = [",".join(keys)]
    for r in rows:
        cells = []
        for k in keys:
            v = r.get(k, "")
            if isinstance(v, bool):
                cells.append(str(int(v)))
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                cells.append(_fmt(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _run_gronwall(cfg: ExperimentConfig, out: Path) -> None:
    p = cfg.payload
    src = Path(cfg.base_dir) / p["sequence_file"]
    if not src.exists():
        raise ConfigurationError(f"sequence_file {str(src)!r} does not exist")
    v = np.loadtxt(src, ndmin=1)
    verdict = stability.gronwall_check(v, p["zeta0"], p["k"], p["lambda"], p["eps"], p["eps_hat"])
    _write_json(out / "gronwall.json", {
        "hypothesis_holds": verdict.hypothesis_holds,
        "conclusion_holds": verdict.conclusion_holds,
        "hypothesis_violations": list(verdict.hypothesis_violations),
        "conclusion_violations": list(verdict.conclusion_violations),
        "min_conclusion_slack": verdict.min_conclusion_slack,
    })


def emit_plot_data(report_files, out_dir: str | Path) -> list[Path]:
    """Whitespace-delimited data files for stability and doss reports, plus a gnuplot stub."""
    out_dir = Path(out_dir)
    written: list[Path] = []
    stubs: list[str] = []
    files = [Path(f) for f in report_files]
    if not files:
        warnings.warn("no report files given; nothing to emit", UserWarning, stacklevel=2)
        return written
    for f in files:
        if not f.exists():
            warnings.warn(f"missing report {f}; skipped", UserWarning, stacklevel=2)
            continue
        try:
            doc = json.loads(f.read_text())
        except (OSError, json.JSONDecodeError):
            warnings.warn(f"unreadable report {f}; skipped", UserWarning, stacklevel=2)
            continue
        if doc.get("kind") == "stability" or "norms" in doc:
            target = out_dir / f"{f.stem}_decay.dat"
            zeta0 = float(np.linalg.norm(doc["u0"]))
            k = float(doc["k_prefactor"])
            rate = float(doc["theorem_rate"])
            lines = ["# n log_norm reference"]
            for n, v in enumerate(doc["norms"]):
                ln = math.log(v) if v > 0 else -math.inf
                ref = math.log(k * zeta0) - rate * n if zeta0 > 0 else -math.inf
                lines.append(f"{n} {_fmt(ln)} {_fmt(ref)}")
            stubs.append(f"plot '{target.name}' using 1:2 with points title 'log norm', "
                         f"'' using 1:3 with lines title 'reference'")
        elif doc.get("kind") == "doss":
            target = out_dir / f"{f.stem}_bound.dat"
            lines = ["# t |u| bound"]
            lines += [f"{_fmt(t)} {_fmt(u)} {_fmt(b)}" for t, u, b in zip(doc["t"], doc["abs_u"], doc["bound"])]
            stubs.append(f"set logscale y; plot '{target.name}' using 1:2 with lines title '|u|', "
                         f"'' using 1:3 with lines title 'bound'; unset logscale y")
        else:
            warnings.warn(f"{f} is not a stability or doss report; skipped", UserWarning, stacklevel=2)
            continue
        target.write_text("\n".join(lines) + "\n")
        written.append(target)
    if written:
        script = out_dir / "plots.gp"
        script.write_text("# gnuplot stub; one plot per data file\n" + "\n".join(
            s + "\npause -1" for s in stubs) + "\n")
        written.append(script)
    return written


def _expand_inputs(patterns, base: Path) -> list[str]:
    files: list[str] = []
    for pat in patterns:
        full = str(base / pat) if not os.path.isabs(pat) else pat
        hits = sorted(glob.glob(full))
        files.extend(hits if hits else [full])
    return files


def run(cfg: ExperimentConfig, jobs: int = 1) -> int:
    """Execute one experiment; returns the process exit status."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        if cfg.subcommand in RUNNERS:
            tasks = []
            for seed in cfg.seeds:
                for rep, child in enumerate(instance_seeds(seed, cfg.replicas)):
                    tasks.append((cfg.subcommand, cfg.payload, seed, rep, child,
                                  _tag(seed, rep, cfg.replicas), str(tmp)))
            rows = solver.parallel_map(_instance, tasks, jobs)
            _write_aggregate(rows, tmp / "aggregate.csv")
        elif cfg.subcommand == "gronwall":
            _run_gronwall(cfg, tmp)
        elif cfg.subcommand == "report":
            inputs = cfg.payload["inputs"]
            if isinstance(inputs, str):
                inputs = [inputs]
            emit_plot_data(_expand_inputs(inputs, Path(cfg.base_dir)), tmp)
        produced = sorted(p for p in tmp.iterdir() if p.is_file())
        for p in produced:
            os.replace(p, out / p.name)
        manifest = {
            "config_sha256": hashlib.sha256(cfg.to_json().encode()).hexdigest(),
            "version": __version__,
            "subcommand": cfg.subcommand,
            "files": {p.name: _sha256(out / p.name) for p in produced},
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
        return EXIT_OK
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError as exc:
        raise ConfigurationError(f"--seeds: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hoelderflow", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SCHEMAS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment configuration")
        sp.add_argument("--output-dir", help="overrides output_dir from the config")
        sp.add_argument("--seeds", help="comma-separated seeds; overrides the config")
        sp.add_argument("--jobs", type=int, default=1, help=f"worker processes (env {JOBS_ENV} wins)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg_path = Path(args.config)
        try:
            text = cfg_path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from exc
        cfg = ExperimentConfig.from_json(text, args.subcommand, str(cfg_path.parent))
        cfg = cfg.with_overrides(args.output_dir, _parse_seeds(args.seeds) if args.seeds else None)
        jobs = args.jobs
        if os.environ.get(JOBS_ENV):
            try:
                jobs = int(os.environ[JOBS_ENV])
            except ValueError:
                raise ConfigurationError(f"{JOBS_ENV} must be an integer")
        return run(cfg, max(1, jobs))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, HoelderflowError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

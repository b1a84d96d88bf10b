"""Experiment configs, check dispatch, deterministic reports and suite runs.

A config is a JSON object naming a model, a check and its sizes. Reports
carry the inputs, every estimate with its standard error, a verdict and
the seed. Wall-clock time lives in a separate timing file so that
reports are byte-identical across reruns and worker counts.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import laplace, poincare, projection, transport
from .core import SeedSpec, TimeGrid
from .functionals import integral, parse_functional
from .models import model_from_json
from .simulate import sample_batch

SCHEMA = "ppfi-report/1"
CHECKS = ("sample", "poincare", "deviation", "transport-law", "clark-ocone", "isometry", "laplace")
EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

_DEFAULTS = {
    "functional": "count",
    "n": 1000,
    "m": 64,
    "grid": 256,
    "reps": 1000,
    "r": 0.5,
    "seed": 0,
    "stream": 0,
    "threads": 1,
}
_INT_KEYS = ("n", "m", "grid", "reps", "seed", "stream", "threads")
_KNOWN = set(_DEFAULTS) | {
    "name", "check", "model", "g", "control", "bound_override", "rhs_scale", "expect", "tolerance",
    "integrand", "x", "y", "m_ladder", "ladder_n", "xs", "times", "levels", "out", "description",
}


class ConfigError(ValueError):
    """A config failed to parse or validate; the message names the line."""


def _line_of(text: str | None, key: str) -> str:
    if not text:
        return ""
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return f"line {text.count(chr(10), 0, m.start()) + 1}: " if m else ""


@dataclass
class ExperimentConfig:
    name: str
    check: str
    model: dict
    params: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, key):
        return self.params[key]

    def get(self, key, default=None):
        return self.params.get(key, default)

    @property
    def seed(self) -> SeedSpec:
        return SeedSpec(self.params["seed"], self.params["stream"])

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.spec.horizon, self.params["grid"])

    @property
    def spec(self):
        if getattr(self, "_spec", None) is None:
            self._spec = model_from_json(self.model)
        return self._spec

    def inputs(self) -> dict:
        """Everything that determines the result; thread count is excluded."""
        out = {"name": self.name, "check": self.check, "model": self.model}
        out.update({k: v for k, v in sorted(self.params.items()) if k not in ("threads", "out")})
        return out


def _load_model(value, base: Path | None, text: str | None) -> dict:
    if isinstance(value, dict):
        return value
    if isinstance(value, str):
        s = value.strip()
        if s.startswith("{"):
            try:
                return json.loads(s)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"model JSON: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        path = Path(s) if base is None or Path(s).is_absolute() else base / s
        try:
            raw = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{_line_of(text, 'model')}cannot read model file {path}: {exc.strerror}") from None
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    raise ConfigError(f"{_line_of(text, 'model')}model must be an object or a path")


def _load_json_arg(value, base: Path | None):
    """A JSON value given inline, as a file path, or already parsed."""
    if not isinstance(value, str):
        return value
    s = value.strip()
    if s[:1] in "{[":
        return json.loads(s)
    path = Path(s) if base is None or Path(s).is_absolute() else base / s
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text())
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def validate(data: dict, text: str | None = None, base: Path | None = None) -> ExperimentConfig:
    """Check a parsed config and fill in defaults."""
    if not isinstance(data, dict):
        raise ConfigError("line 1: config must be a JSON object")
    unknown = sorted(set(data) - _KNOWN)
    if unknown:
        raise ConfigError(f"{_line_of(text, unknown[0])}unknown key {unknown[0]!r}")
    check = data.get("check")
    if check not in CHECKS:
        raise ConfigError(f"{_line_of(text, 'check')}check must be one of {', '.join(CHECKS)}; got {check!r}")
    if "model" not in data:
        raise ConfigError("line 1: missing required key 'model'")
    model = _load_model(data["model"], base, text)
    try:
        spec = model_from_json(model)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{_line_of(text, 'model')}invalid model: {exc}") from None
    params = dict(_DEFAULTS)
    params.update({k: v for k, v in data.items() if k not in ("name", "check", "model")})
    for key in _INT_KEYS:
        v = params[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
            raise ConfigError(f"{_line_of(text, key)}{key} must be an integer; got {v!r}")
        params[key] = int(v)
        if key not in ("seed", "stream") and params[key] < 1:
            raise ConfigError(f"{_line_of(text, key)}{key} must be at least 1")
    for key in ("r", "bound_override", "rhs_scale", "tolerance"):
        if params.get(key) is not None and not isinstance(params[key], (int, float)):
            raise ConfigError(f"{_line_of(text, key)}{key} must be a number")
    try:
        params["functional"] = parse_functional(_load_json_arg(params["functional"], base)).to_json()
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{_line_of(text, 'functional')}invalid functional: {exc}") from None
    if "g" in params:
        params["g"] = _load_json_arg(params["g"], base)
        if isinstance(params["g"], (int, float)):
            params["g"] = {"kind": "constant", "value": float(params["g"])}
        try:
            g = _g_arg(params["g"])
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"{_line_of(text, 'g')}invalid g: {exc}") from None
        if check == "deviation" and "functional" not in data:
            params["functional"] = integral(g, by_mark=isinstance(g, list)).to_json()
    if check in ("deviation", "transport-law") and "g" not in params:
        raise ConfigError(f"line 1: check {check} needs 'g'")
    if check == "laplace" and "control" not in params:
        params["control"] = "zero"
    name = data.get("name") or check
    cfg = ExperimentConfig(str(name), check, model, params, text)
    cfg._spec = spec
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return validate(data, text, path.parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# report rendering ----------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return v
    if hasattr(obj, "to_json"):
        return _plain(obj.to_json())
    return obj


def render(report: dict) -> str:
    """Canonical JSON text: sorted keys, repr floats, +inf for overflow."""
    return json.dumps(_plain(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


# checks --------------------------------------------------------------------


def _functional(cfg):
    return parse_functional(cfg["functional"])


def _run_sample(cfg):
    batch = sample_batch(cfg.spec, cfg["n"], cfg.seed, cfg["threads"])
    counts = batch.counts
    if cfg.get("out"):
        Path(cfg["out"]).write_text(batch.to_jsonl())
    results = {"paths": len(batch), "mean_count": float(counts.mean()), "max_count": int(counts.max())}
    return results, "pass", "mean_count", results["mean_count"]


def _run_poincare(cfg):
    spec = cfg.spec
    grid = cfg.grid
    gamma = poincare.gamma_for(spec, grid)
    rep = poincare.poincare_check(spec, _functional(cfg), gamma, cfg["n"], None, grid, cfg.seed, cfg["threads"],
                                  cfg.get("rhs_scale", 1.0))
    results = rep.to_json()
    results["gamma_bound"] = poincare.gamma_bound(spec)
    return results, results["status"], "gamma", gamma


def _g_arg(g):
    from . import catalog
    if isinstance(g, list):
        return [catalog.time_function(v) for v in g]
    return catalog.time_function(g)


def _run_deviation(cfg):
    spec, grid = cfg.spec, cfg.grid
    rf = transport.build_h(spec, _g_arg(cfg["g"]), grid)
    G = _functional(cfg)
    rep = transport.empirical_deviation(spec, G, rf, cfg["n"], float(cfg["r"]), cfg["reps"], cfg.seed, cfg["threads"],
                                        bound_override=cfg.get("bound_override"))
    results = {**rep.to_json(), "rate_function": rf.to_json(), "functional": G.to_json()}
    return results, "pass" if rep.pass_ else "fail", "c_r", rep.rate


def _run_transport_law(cfg):
    spec, grid = cfg.spec, cfg.grid
    rf = transport.build_h_law(spec, _g_arg(cfg["g"]), grid)
    xs = [float(x) for x in cfg.get("xs", [0.25 * k for k in range(1, 21)])]
    table = []
    dominated = True
    for x in xs:
        c = rf.conjugate(x)
        ct = rf.c_tilde(x)
        if ct is not None and not c >= ct - 1e-9 * max(1.0, abs(ct)):
            dominated = False
        table.append({"x": x, "c": c, "c_tilde": ct})
    convex = rf.is_convex()
    r = float(cfg["r"])
    if cfg.get("out"):
        stem = Path(cfg["out"])
        stem.with_name(stem.name + ".lambda.csv").write_text(rf.lambda_csv())
        stem.with_name(stem.name + ".conjugate.csv").write_text(rf.conjugate_csv(xs))
    results = {
        "rate_function": rf.to_json(),
        "lambda_at_zero": rf.lam(0.0),
        "convex": convex,
        "c_dominates_c_tilde": dominated,
        "c_r": rf.conjugate(r),
        "r": r,
        "table": table,
    }
    return results, "pass" if convex and dominated else "fail", "c_r", results["c_r"]


def _run_clark_ocone(cfg):
    spec, grid = cfg.spec, cfg.grid
    G = _functional(cfg)
    integrand = cfg.get("integrand")
    tol = float(cfg.get("tolerance", 1e-4 if integrand is not None else 0.05))
    rep = projection.clark_ocone_residual(spec, G, cfg["n"], cfg["m"], grid, cfg.seed, cfg["threads"], integrand)
    results = {**rep.to_json(), "tolerance": tol}
    ok = rep.relative <= tol
    ladder = cfg.get("m_ladder")
    if ladder and integrand is None:
        rungs = []
        for m in ladder:
            r = projection.clark_ocone_residual(spec, G, int(cfg.get("ladder_n", cfg["n"])), int(m), grid, cfg.seed,
                                                cfg["threads"])
            rungs.append({"m_inner": int(m), "residual": r.residual.to_json()})
        steps = [b["residual"]["mean"] <= a["residual"]["mean"] + 3 * math.hypot(a["residual"]["std_error"],
                                                                                 b["residual"]["std_error"])
                 for a, b in zip(rungs, rungs[1:])]
        results["ladder"] = rungs
        results["ladder_decreasing"] = all(steps)
        ok = ok and all(steps)
    return results, "pass" if ok else "fail", "residual", rep.residual.mean


def _run_isometry(cfg):
    spec, grid = cfg.spec, cfg.grid
    res = projection.isometry_check(spec, cfg.get("x", 1.0), cfg.get("y", 1.0), cfg["n"], grid, cfg.seed, cfg["threads"])
    return res, "pass" if res["pass"] else "fail", "difference", res["difference"]


def _run_laplace(cfg):
    spec, grid = cfg.spec, cfg.grid
    G = _functional(cfg)
    ctrl = laplace.parse_control(str(cfg["control"]), G, grid, spec.horizon)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", laplace.SmallSampleWarning)
        rep = laplace.variational_gap(spec, G, ctrl, cfg["n"], grid, cfg.seed, cfg["threads"])
    results = rep.to_json()
    expect = cfg.get("expect", "nonnegative")
    if expect == "nonnegative":
        ok = rep.nonnegative
    elif expect == "tight":
        ok = rep.tight
    elif expect == "positive":
        ok = rep.gap.mean >= 3 * rep.gap.std_error
    else:
        raise ConfigError(f"{_line_of(cfg.source, 'expect')}expect must be nonnegative, tight or positive")
    ok = ok and rep.weights_ok
    results["expect"] = expect
    results["warnings"] = [str(w.message) for w in caught]
    return results, "pass" if ok else "fail", "gap", rep.gap.mean


_RUNNERS = {
    "sample": _run_sample,
    "poincare": _run_poincare,
    "deviation": _run_deviation,
    "transport-law": _run_transport_law,
    "clark-ocone": _run_clark_ocone,
    "isometry": _run_isometry,
    "laplace": _run_laplace,
}


@dataclass
class Outcome:
    report: dict
    verdict: str
    metric: str
    value: float
    seconds: float

    @property
    def exit_code(self) -> int:
        return EXIT_FAIL if self.verdict == "fail" else EXIT_PASS

    def text(self) -> str:
        return render(self.report)


def run(cfg: ExperimentConfig) -> Outcome:
    """Execute the configured check; errors propagate to the caller."""
    t0 = time.perf_counter()
    results, verdict, metric, value = _RUNNERS[cfg.check](cfg)
    seconds = time.perf_counter() - t0
    report = {
        "schema": SCHEMA,
        "inputs": cfg.inputs(),
        "seed": cfg.seed.to_json(),
        "results": results,
        "verdict": verdict,
        "metric": {"name": metric, "value": value},
    }
    return Outcome(report, verdict, metric, value, seconds)


def write_report(outcome: Outcome, path) -> None:
    """Write the report and, next to it, a timing file with the wall-clock."""
    path = Path(path)
    path.write_text(outcome.text())
    timing = {"schema": SCHEMA, "report": path.name, "wall_clock_seconds": round(outcome.seconds, 3)}
    path.with_name(path.stem + ".timing.json").write_text(json.dumps(timing, indent=2) + "\n")


# suites --------------------------------------------------------------------


SUITE_DIR = Path(__file__).with_name("suite")
CSV_FIELDS = ("name", "check", "metric", "value", "verdict", "runtime_s", "message")


def reproduce_all(suite=SUITE_DIR, out_dir=None, threads: int = 1, log=None) -> tuple:
    """Run every *.json config in ``suite``; returns (csv text, exit code).

    A broken config becomes an ``error`` row and the others still run.
    """
    suite = Path(suite)
    files = sorted(suite.glob("*.json")) if suite.is_dir() else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    worst = EXIT_PASS
    for path in files:
        t0 = time.perf_counter()
        try:
            cfg = load_config(path)
            if threads != 1:
                cfg.params["threads"] = threads
            outcome = run(cfg)
            row = (cfg.name, cfg.check, outcome.metric, _cell(outcome.value), outcome.verdict,
                   f"{outcome.seconds:.2f}", "")
            if out_dir is not None:
                write_report(outcome, Path(out_dir) / f"{path.stem}.report.json")
            if outcome.verdict == "fail" and worst == EXIT_PASS:
                worst = EXIT_FAIL
        except Exception as exc:  # noqa: BLE001 - one broken config must not stop the suite
            row = (path.stem, "", "", "", "error", f"{time.perf_counter() - t0:.2f}", str(exc).replace("\n", " "))
            worst = EXIT_ERROR
        writer.writerow(row)
        if log is not None:
            log(",".join(row))
    return buf.getvalue(), worst


def _cell(v) -> str:
    v = _plain(v)
    return v if isinstance(v, str) else repr(v)

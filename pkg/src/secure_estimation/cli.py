"""Command-line experiments: case studies, performance regions and exponent studies.

Configs are YAML. Coordinates are zero-based. Every CSV has a header row and
ends with a ``#`` comment block recording seed, sample count and version.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .families import (
    GaussianConvolvedUniform,
    GaussianMeanShift,
    GaussianPrior,
    GaussianVarianceOnly,
    InverseChiSquaredPrior,
    PointMassPrior,
    UniformPrior,
)
from .model import ContractError, ModelSpace
from .numerics import MonteCarloConfig, NumericalError
from .optimal import (
    ConfigurationError,
    DecisionTable,
    FeasibilityError,
    feasibility_floor,
    solve_P,
)
from .scalable import (
    InfeasibleTargetError,
    MarginalLR,
    OptimalBayes,
    PipelineConfig,
    calibrate_pipeline,
    empirical_exponent,
    evaluate_pipeline,
    joint_exponent,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

DEFAULT_SEED = 20240101

# Reference rows: nu_1^0, nu_1^1, nu_2^0, nu_2^1, q_hat, alpha, beta, q
REFERENCE_ROWS = (
    (0.2, 0.57, 0.2, 0.5261, 1.48, 0.0215, 0.5134, 1.126),
    (0.25, 0.4384, 0.2, 0.658, 1.456, 0.0216, 0.6484, 1.046),
    (0.3, 0.4467, 0.15, 0.6359, 1.434, 0.0482, 0.5946, 1.060),
    (0.3, 0.4467, 0.3, 0.4124, 1.491, 0.0762, 0.4198, 1.151),
    (0.35, 0.4021, 0.25, 0.4832, 1.434, 0.0528, 0.4812, 1.136),
    (0.15, 0.689, 0.35, 0.4124, 1.44, 0.0476, 0.476, 1.140),
)


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


# ---------------------------------------------------------------- defaults


DEFAULTS = {
    "case1": {
        "n": 1,
        "prior": {"kind": "gaussian", "mean": 0.0, "sigma": 3.0},
        "attack_free": [{"kind": "mean_shift", "h": 1.0, "sigma": 1.0},
                        {"kind": "mean_shift", "h": 4.0, "sigma": 1.0}],
        "compromised": [{"kind": "convolved_uniform", "h": 1.0, "sigma": 1.0, "a": -40.0, "b": 40.0},
                        {"kind": "mean_shift", "h": 4.0, "sigma": 1.0}],
        "scenarios": [[0]],
        "eps0": 0.5,
        "sweep": {"alpha": [0.1], "beta_grid": "0.1:1:10"},
    },
    "case2": {
        "n": 1,
        "prior": {"kind": "uniform", "lo": -2.0, "hi": 2.0},
        "attack_free": [{"kind": "mean_shift", "h": 1.0, "var": 1.0},
                        {"kind": "mean_shift", "h": 2.0, "var": 1.0}],
        "compromised": [{"kind": "mean_shift", "h": 1.0, "var": 5.0},
                        {"kind": "mean_shift", "h": 2.0, "var": 5.0}],
        "scenarios": [[0], [1]],
        "eps0": 0.2,
        "scenario_priors": [0.2, 0.6],
        "sweep": {"alpha": [0.05, 0.1, 0.2], "beta_grid": "0.8:1:5"},
    },
    "case3": {
        "n": 1,
        "prior": {"kind": "gaussian", "mean": 0.0, "var": 4.0},
        "attack_free": [{"kind": "mean_shift", "h": 1.0, "var": 2.0},
                        {"kind": "mean_shift", "h": 4.0, "var": 2.0}],
        "compromised": [{"kind": "mean_shift", "h": 1.0, "var": 6.0},
                        {"kind": "mean_shift", "h": 4.0, "var": 6.0}],
        "scenarios": [[0], [1]],
        "eps0": 0.0,
        "exponent": {"n_grid": list(range(1, 21)), "trials": 100_000},
        "table": {
            "n": 1,
            "prior": {"kind": "gaussian", "mean": 0.0, "var": 3.0},
            "attack_free": [{"kind": "mean_shift", "h": 1.0, "var": 1.0},
                            {"kind": "mean_shift", "h": 1.0, "var": 1.0}],
            "compromised": [{"kind": "convolved_uniform", "h": 1.0, "var": 1.0, "a": -10.0, "b": 10.0},
                            {"kind": "convolved_uniform", "h": 1.0, "var": 1.0, "a": -10.0, "b": 10.0}],
            "scenarios": [[0], [1]],
            "eps0": 0.5,
            "retention": "one_minus_nu",
            "pipeline_samples": 40_000,
            "rows": [list(r[:4]) + [r[5], r[6]] for r in REFERENCE_ROWS],
        },
    },
}


# ------------------------------------------------------------ config I/O


def _line_index(node, path=(), out=None):
    """Map key paths of a composed YAML node tree to 1-based line numbers."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Section:
    """Dict view that names the missing or malformed field, with its line when known."""

    def __init__(self, data, path=(), lines=None):
        if not isinstance(data, dict):
            raise ConfigError(f"{_where(path, lines)}expected a mapping")
        self.data, self.path, self.lines = data, path, lines or {}

    def has(self, key):
        return key in self.data

    def sub(self, key):
        return _Section(self.need(key), self.path + (key,), self.lines)

    def need(self, key):
        if key not in self.data:
            raise ConfigError(f"{_where(self.path, self.lines)}missing required field "
                              f"'{'.'.join(map(str, self.path + (key,)))}'")
        return self.data[key]

    def num(self, key, default=None):
        if key not in self.data and default is not None:
            return float(default)
        v = self.need(key)
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{_where(self.path + (key,), self.lines)}field "
                              f"'{'.'.join(map(str, self.path + (key,)))}' must be a number, got {v!r}") from None

    def items(self, key):
        v = self.need(key)
        if not isinstance(v, list):
            raise ConfigError(f"{_where(self.path + (key,), self.lines)}field '{key}' must be a list")
        return v


def _where(path, lines):
    for k in range(len(path), -1, -1):
        if lines and path[:k] in lines:
            return f"line {lines[path[:k]]}: "
    return ""


def _variance(sec: _Section) -> float:
    if sec.has("var") and sec.has("sigma"):
        raise ConfigError(f"{_where(sec.path, sec.lines)}give either 'var' or 'sigma', not both")
    v = sec.num("sigma") ** 2 if sec.has("sigma") else sec.num("var")
    if not v > 0:
        raise ConfigError(f"{_where(sec.path, sec.lines)}variance must be positive")
    return v


def _family(sec: _Section):
    kind = sec.need("kind")
    try:
        if kind in ("mean_shift", "gaussian"):
            return GaussianMeanShift(sec.num("h", 1.0), _variance(sec), sec.num("offset", 0.0))
        if kind == "convolved_uniform":
            return GaussianConvolvedUniform(sec.num("h", 1.0), _variance(sec), sec.num("a"), sec.num("b"),
                                            sec.num("offset", 0.0))
        if kind == "variance_only":
            return GaussianVarianceOnly(sec.num("mean", 0.0), sec.num("scale", 1.0))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{_where(sec.path, sec.lines)}{e}") from None
    raise ConfigError(f"{_where(sec.path, sec.lines)}unknown family kind {kind!r}")


def _prior(sec: _Section):
    kind = sec.need("kind")
    try:
        if kind == "gaussian":
            return GaussianPrior(sec.num("mean", 0.0), _variance(sec))
        if kind == "uniform":
            return UniformPrior(sec.num("lo"), sec.num("hi"))
        if kind == "inv_chi2":
            return InverseChiSquaredPrior(sec.num("zeta"), sec.num("phi"))
        if kind == "point":
            return PointMassPrior(sec.num("x0"))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{_where(sec.path, sec.lines)}{e}") from None
    raise ConfigError(f"{_where(sec.path, sec.lines)}unknown prior kind {kind!r}")


def build_model(sec: _Section) -> ModelSpace:
    fams0 = [_family(_Section(f, sec.path + ("attack_free", i), sec.lines))
             for i, f in enumerate(sec.items("attack_free"))]
    fams1 = [_family(_Section(f, sec.path + ("compromised", i), sec.lines))
             for i, f in enumerate(sec.items("compromised"))]
    prior = _prior(sec.sub("prior"))
    scen = sec.data.get("scenarios")
    sp = sec.data.get("scenario_priors")
    try:
        return ModelSpace.build(fams0, fams1, prior, int(sec.num("n", 1)), K=int(sec.num("K", 1)),
                                eps0=sec.num("eps0", 0.5), scenarios=scen, scenario_priors=sp)
    except (ContractError, TypeError) as e:
        raise ConfigError(f"{_where(sec.path, sec.lines)}{e}") from None


def parse_grid(text) -> list[float]:
    """``lo:hi:steps`` (inclusive, evenly spaced) or a list of numbers."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        lo, hi, steps = str(text).split(":")
        k = int(steps)
        if k < 1:
            raise ValueError
        return [float(lo)] if k == 1 else [float(v) for v in np.linspace(float(lo), float(hi), k)]
    except ValueError:
        raise ConfigError(f"grid {text!r} must look like lo:hi:steps") from None


@dataclass
class ExperimentConfig:
    case: str
    raw: dict
    lines: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    samples: int = 12_000
    workers: int = 1
    out: Path | None = None
    alphas: list | None = None
    betas: list | None = None

    @property
    def mc(self) -> MonteCarloConfig:
        return MonteCarloConfig(self.samples, self.seed, workers=self.workers)

    def section(self) -> _Section:
        return _Section(self.raw, (), self.lines)


def load_config(command: str, path: str | None, overrides: argparse.Namespace) -> ExperimentConfig:
    raw, lines = {}, {}
    if path:
        try:
            text = Path(path).read_text()
            node = yaml.compose(text)
            raw = yaml.safe_load(text) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        lines = _line_index(node) if node is not None else {}
    case = raw.get("case", command if command in DEFAULTS else None)
    if command in DEFAULTS and case != command:
        raise ConfigError(f"config case {case!r} does not match subcommand {command!r}")
    if command == "custom" and "model" not in raw:
        raise ConfigError("missing required field 'model'")
    base = dict(DEFAULTS.get(case, {})) if case in DEFAULTS else {}
    if command in DEFAULTS:
        base.update(raw)
        raw = base
    elif command in ("region", "exponent") and "model" not in raw:
        raw = dict(DEFAULTS["case1" if command == "region" else "case3"], **raw)
    cfg = ExperimentConfig(command, raw, lines)
    sec = cfg.section()
    cfg.seed = int(overrides.seed if overrides.seed is not None else sec.num("seed", DEFAULT_SEED))
    cfg.samples = int(overrides.samples if overrides.samples is not None else sec.num("samples", 12_000))
    cfg.workers = int(sec.num("workers", 1))
    out = overrides.out or raw.get("output")
    cfg.out = Path(out) if out else None
    sweep = raw.get("sweep", {}) or {}
    cfg.alphas = list(overrides.alpha) if overrides.alpha else [float(a) for a in sweep.get("alpha", [0.1])]
    grid = overrides.beta_grid or sweep.get("beta_grid", "0.1:1:10")
    cfg.betas = parse_grid(grid)
    if cfg.samples < 1:
        raise ConfigError("samples must be positive")
    if any(not 0 < a <= 1 for a in cfg.alphas) or any(not 0 < b <= 1 for b in cfg.betas):
        raise ConfigError("alpha and beta values must lie in (0, 1]")
    return cfg


def model_section(cfg: ExperimentConfig) -> _Section:
    sec = cfg.section()
    return sec.sub("model") if sec.has("model") else sec


# ------------------------------------------------------------------ CSV


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render_csv(header: Sequence[str], rows: Sequence[Sequence], cfg: ExperimentConfig,
               notes: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    for note in notes:
        buf.write(f"# {note}\n")
    buf.write(f"# command={cfg.case}\n# seed={cfg.seed}\n# samples={cfg.samples}\n"
              f"# version={__version__}\n")
    return buf.getvalue()


def _emit(text: str, path: Path | None, suffix: str | None = None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    if suffix:
        path = path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


# ------------------------------------------------------------ experiments


REGION_HEADER = ["alpha", "beta", "status", "q", "q_se", "P_fa", "P_fa_se", "P_md", "P_md_se",
                 "J", "J_se", "u_star", "gap", "beta_floor"]


def _region_rows(model: ModelSpace, cfg: ExperimentConfig, alphas, betas):
    table = DecisionTable.from_model(model, cfg.mc)
    rows, curves = [], {}
    for a in alphas:
        floor = feasibility_floor(None, a, table=table)
        curve = []
        for b in betas:
            try:
                p = solve_P(None, a, b, table=table).point
            except FeasibilityError:
                rows.append([a, b, "infeasible"] + [math.nan] * 10 + [floor])
                continue
            rows.append([a, b, "ok", p.q, p.q_se, p.P_fa, p.P_fa_se, p.P_md, p.P_md_se,
                         p.J, p.J_se, p.u_star, p.gap, floor])
            curve.append((b, p.q, p.q_se))
        curves[a] = curve
    return rows, curves, table


def _monotone(curve, slack=3.0) -> bool:
    return all(q2 <= q1 + slack * math.hypot(s1, s2) for (_, q1, s1), (_, q2, s2) in zip(curve, curve[1:]))


def run_region(cfg: ExperimentConfig, model: ModelSpace | None = None) -> tuple[str, bool]:
    model = model or build_model(model_section(cfg))
    rows, curves, _ = _region_rows(model, cfg, cfg.alphas, sorted(cfg.betas))
    notes = [f"monotone_q_in_beta alpha={_fmt(a)} {'pass' if _monotone(c) else 'fail'}"
             for a, c in curves.items()]
    if len(curves) > 1:
        notes.append(f"monotone_q_in_alpha {'pass' if _alpha_ordered(curves) else 'fail'}")
    return render_csv(REGION_HEADER, rows, cfg, notes), any(c for c in curves.values())


def _alpha_ordered(curves, slack=3.0) -> bool:
    alphas = sorted(curves)
    for a1, a2 in zip(alphas, alphas[1:]):
        q1 = {b: (q, s) for b, q, s in curves[a1]}
        for b, q, s in curves[a2]:
            if b in q1 and q > q1[b][0] + slack * math.hypot(s, q1[b][1]):
                return False
    return True


def run_case1(cfg: ExperimentConfig) -> tuple[str, bool]:
    return run_region(cfg)


def run_case2(cfg: ExperimentConfig) -> tuple[str, bool]:
    return run_region(cfg)


EXPONENT_HEADER = ["n", "rule", "error_rate", "neg_log_p", "trials", "flag"]


def run_exponent(cfg: ExperimentConfig, model: ModelSpace | None = None) -> tuple[str, dict]:
    sec = cfg.section()
    model = model or build_model(model_section(cfg))
    ex = sec.sub("exponent") if sec.has("exponent") else _Section({}, ("exponent",))
    grid = [int(v) for v in ex.data.get("n_grid", list(range(1, 21)))]
    trials = int(ex.num("trials", 100_000))
    rows, reports = [], {}
    for name, rule in (("optimal", OptimalBayes()), ("lr", MarginalLR())):
        rep = empirical_exponent(model, rule, grid, trials, cfg.seed, cfg.workers)
        reports[name] = rep
        for n, p in zip(rep.n_grid, rep.error_rates):
            flag = "dropped" if n in rep.dropped else ("sparse" if n in rep.sparse else "")
            rows.append([n, name, p, -math.log(p) if p > 0 else math.inf, trials, flag])
    joint = joint_exponent(model, MonteCarloConfig(20_000, cfg.seed))
    notes = [f"predicted_exponent={_fmt(reports['optimal'].predicted)}",
             f"joint_marginal_exponent_n1={_fmt(joint)}"]
    notes += [f"slope {k}={_fmt(r.slope)} se={_fmt(r.slope_se)} plain={_fmt(r.plain_slope)}"
              for k, r in reports.items()]
    return render_csv(EXPONENT_HEADER, rows, cfg, notes), reports


TABLE_HEADER = ["nu10", "nu11", "nu20", "nu21", "q_hat", "q_hat_se", "alpha", "beta", "q", "q_se",
                "P_fa", "P_md", "q_hat_ref", "q_ref", "ordered"]


def reference_model(cfg: ExperimentConfig) -> tuple[ModelSpace, _Section]:
    tsec = cfg.section().sub("table")
    return build_model(tsec), tsec


def replicate_table(cfg: ExperimentConfig) -> list[dict]:
    """Scalable and optimal degradation factors for each configured reference-table row."""
    model, tsec = reference_model(cfg)
    retention = tsec.data.get("retention", "one_minus_nu")
    if retention not in ("nu", "one_minus_nu"):
        raise ConfigError("table.retention must be 'nu' or 'one_minus_nu'")
    conv = (lambda v: 1.0 - v) if retention == "one_minus_nu" else (lambda v: v)
    table = DecisionTable.from_model(model, cfg.mc)
    pmc = MonteCarloConfig(int(tsec.num("pipeline_samples", 40_000)), cfg.seed, workers=cfg.workers)
    J0 = table.J0
    refs = {tuple(r[:4]): (r[4], r[7]) for r in REFERENCE_ROWS}
    out = []
    for row in tsec.items("rows"):
        nu = [float(v) for v in row[:4]]
        alpha, beta = float(row[4]), float(row[5])
        pc = PipelineConfig(alpha, ((conv(nu[0]), conv(nu[1])), (conv(nu[2]), conv(nu[3]))))
        cal = calibrate_pipeline(model, pc, pmc)
        ev = evaluate_pipeline(model, cal, J0, pmc)
        pt = solve_P(None, alpha, beta, table=table).point
        ref = refs.get(tuple(nu), (math.nan, math.nan))
        out.append(dict(nu=nu, q_hat=ev.q_hat, q_hat_se=ev.q_hat_se, alpha=alpha, beta=beta, q=pt.q,
                        q_se=pt.q_se, P_fa=pt.P_fa, P_md=pt.P_md, q_hat_ref=ref[0], q_ref=ref[1],
                        ordered=ev.q_hat > pt.q, evaluation=ev, point=pt))
    return out


def run_case3(cfg: ExperimentConfig) -> tuple[dict, bool]:
    exp_csv, _ = run_exponent(cfg)
    rows = replicate_table(cfg)
    csv_rows = [r["nu"] + [r["q_hat"], r["q_hat_se"], r["alpha"], r["beta"], r["q"], r["q_se"],
                           r["P_fa"], r["P_md"], r["q_hat_ref"], r["q_ref"], r["ordered"]] for r in rows]
    notes = [f"all_rows_ordered {'pass' if all(r['ordered'] for r in rows) else 'fail'}"]
    return {"exponent": exp_csv, "table": render_csv(TABLE_HEADER, csv_rows, cfg, notes)}, True


def run_custom(cfg: ExperimentConfig) -> tuple[dict, bool]:
    sec = cfg.section()
    model = build_model(sec.sub("model"))
    outputs, any_ok = {}, False
    if sec.has("sweep") or not sec.has("exponent"):
        text, ok = run_region(cfg, model)
        outputs["region"] = text
        any_ok |= ok
    if sec.has("exponent"):
        outputs["exponent"], _ = run_exponent(cfg, model)
        any_ok = True
    return outputs, any_ok


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="secure-estimation", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["case1", "case2", "case3", "custom", "region", "exponent"])
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int, help="base RNG seed (unsigned 64-bit)")
    p.add_argument("--samples", type=int, help="Monte Carlo sample budget")
    p.add_argument("--out", help="output CSV path (stdout when omitted)")
    p.add_argument("--alpha", type=float, action="append", help="false-alarm level; repeatable")
    p.add_argument("--beta-grid", help="miss-rate grid lo:hi:steps")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.command, args.config, args)
        if args.command in ("case1", "case2", "region"):
            text, ok = {"case1": run_case1, "case2": run_case2, "region": run_region}[args.command](cfg)
            _emit(text, cfg.out)
            return EXIT_OK if ok else EXIT_INFEASIBLE
        if args.command == "exponent":
            text, _ = run_exponent(cfg)
            _emit(text, cfg.out)
            return EXIT_OK
        outputs, ok = (run_case3 if args.command == "case3" else run_custom)(cfg)
        for name, text in outputs.items():
            _emit(text, cfg.out, name if cfg.out is not None else None)
        return EXIT_OK if ok else EXIT_INFEASIBLE
    except (ConfigError, ConfigurationError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FeasibilityError, InfeasibleTargetError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())

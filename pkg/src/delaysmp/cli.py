"""Experiment runner: ``delaysmp {simulate,adjoint,verify,converge,portfolio}``.

Configs are TOML files with the tables below (every key is optional; the
command-line flags override the matching entries)::

    [scenario]              name = "lq_delay" | "pointwise" | "tracking" | "portfolio"
    [scenario.params]       keyword arguments of the scenario builder
    [grid]                  T, N, delay
    [mc]                    paths, seed, antithetic
    [control]               kind = "constant" | "policy"; value = [...]; policy = "optimal"
    [spike]                 t0, eps = [...], v = [...]
    [mollify]               n = [...]
    [regression]            degree, ridge, lags
    [verify]                tol, k_se, kernel_times = [...], pipeline = "general" | "density" | "both"
    [output]                dir, binary

Data goes to files in the output directory, summaries to stderr.  Every file
carries the config hash and the seed; ``verify`` exits 1 when any verdict fails.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .absde import RegressionConfig, duality_residual_first, duality_residual_second, solve_absde
from .measures import mollify, past_integral
from .model import ControlPath, MarketFunction, Utility, build_scenario
from .paths import make_grid, sample_brownian
from .sdde import (
    SpikeWindow,
    cost,
    simulate_first_variation,
    simulate_regularized_variations,
    simulate_second_variation,
    simulate_state,
    spike,
    sup_sq,
    write_binary,
    write_csv,
)
from .smp import check_variational_inequality, cost_expansion_check, fit_slope, p00_convergence_study, p00_kernel

log = logging.getLogger("delaysmp")

DEFAULTS: dict[str, Any] = {
    "scenario": {"name": "lq_delay", "params": {}},
    "grid": {"T": 1.0, "N": 128, "delay": 0.5},
    "mc": {"paths": 2048, "seed": 0, "antithetic": False},
    "control": {"kind": "constant", "value": [-1.0], "policy": "optimal"},
    "spike": {"t0": 0.25, "eps": [0.125, 0.0625, 0.03125, 0.015625], "v": [1.0]},
    "mollify": {"n": [4, 8, 16, 32]},
    "regression": {"degree": 2, "ridge": 1e-8, "lags": 0},
    "verify": {"tol": 1e-3, "k_se": 3.0, "kernel_times": None, "pipeline": "general", "expansion": True},
    "output": {"dir": "out", "binary": False},
}


# used when a config names lq_delay without a params table
LQ_DEFAULT = {"a0": 0.5, "a1": 0.5, "s0": 0.3, "s1": 0.2, "c_u": 0.5, "kb": 0.3, "ks": 0.3, "mu_b": "mixed", "mu_sigma": "dirac"}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    workers: int = 1
    out: Path = field(default_factory=lambda: Path("out"))

    @property
    def hash(self) -> str:
        # the output location does not change any data
        body = {k: v for k, v in self.raw.items() if k != "output"}
        blob = json.dumps(body, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def seed(self) -> int:
        return int(self.raw["mc"]["seed"])

    def section(self, name: str) -> dict:
        return self.raw[name]


def load_config(path: str | None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    user: dict = {}
    if path:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    raw = _merge(DEFAULTS, user)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        sect, name = key.split(".")
        raw[sect][name] = val
    if raw["scenario"]["name"] == "lq_delay" and not raw["scenario"].get("params"):
        raw["scenario"]["params"] = dict(LQ_DEFAULT)
    _validate(raw)
    return ExperimentConfig(raw=raw, out=Path(raw["output"]["dir"]))


def _validate(raw: dict) -> None:
    from .model import SCENARIOS

    if raw["scenario"]["name"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {raw['scenario']['name']!r}")
    g = raw["grid"]
    try:
        grid = make_grid(float(g["T"]), int(g["N"]), float(g["delay"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for e in raw["spike"]["eps"]:
        k = e / grid.dt
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ConfigError(f"spike width {e} is not a positive multiple of dt={grid.dt}")
    sp = raw["spike"]
    times = [("spike.t0", float(sp["t0"]))] + [("verify.kernel_times", float(t)) for t in raw["verify"].get("kernel_times") or []]
    for key, t in times:
        k = t / grid.dt
        if abs(k - round(k)) > 1e-9 * max(1.0, k) or not 0 <= round(k) <= grid.N:
            raise ConfigError(f"{key} = {t} is not a grid node of step {grid.dt}")
    if float(sp["t0"]) + max(raw["spike"]["eps"]) > grid.T + 1e-12:
        raise ConfigError("spike window extends past the horizon")
    if raw["verify"]["pipeline"] not in ("general", "density", "both"):
        raise ConfigError("verify.pipeline must be general, density or both")


# ---------------------------------------------------------------------------
# building blocks


def _scenario(cfg: ExperimentConfig):
    sc = cfg.section("scenario")
    g = cfg.section("grid")
    params = dict(sc.get("params", {}))
    name = sc["name"]
    if name == "portfolio":
        params = _portfolio_params(params)
    params.setdefault("T", float(g["T"]))
    params.setdefault("d", float(g["delay"]))
    spec = build_scenario(name, params)
    if abs(spec.T - float(g["T"])) > 1e-12 or abs(spec.delay - float(g["delay"])) > 1e-12:
        raise ConfigError("scenario T/delay disagree with the grid table")
    return spec


def _portfolio_params(p: dict) -> dict:
    p = dict(p)
    if "b_base" in p or "b_amp" in p:
        p["b"] = MarketFunction.tanh_past(float(p.pop("b_base", 0.08)), float(p.pop("b_amp", 0.05)), float(p.get("S0", 1.0)))
    if "sigma_const" in p:
        p["sigma"] = MarketFunction.constant(float(p.pop("sigma_const")))
    if "r_const" in p:
        p["r"] = MarketFunction.constant(float(p.pop("r_const")))
    if "consumption_weight" in p:
        p["U1"] = Utility.consumption(float(p.pop("rho", 0.1)), float(p.pop("consumption_weight")))
    return p


def _bundle(cfg: ExperimentConfig):
    g = cfg.section("grid")
    mc = cfg.section("mc")
    grid = make_grid(float(g["T"]), int(g["N"]), float(g["delay"]))
    return sample_brownian(grid, int(mc["paths"]), int(mc["seed"]), workers=cfg.workers, antithetic=bool(mc["antithetic"]))


def _control(cfg: ExperimentConfig, spec, W):
    c = cfg.section("control")
    if c["kind"] == "policy":
        pol = spec.policies.get(c["policy"])
        if pol is None:
            raise ConfigError(f"scenario {spec.name} has no policy {c['policy']!r}")
        return pol
    if c["kind"] == "constant":
        return ControlPath.constant(c["value"], W.grid.N)
    raise ConfigError(f"unknown control kind {c['kind']!r}")


def _regression(cfg: ExperimentConfig) -> RegressionConfig:
    r = cfg.section("regression")
    return RegressionConfig(degree=int(r["degree"]), ridge=float(r["ridge"]), lags=int(r["lags"]))


def _forward(cfg: ExperimentConfig):
    spec = _scenario(cfg)
    W = _bundle(cfg)
    x = simulate_state(spec, _control(cfg, spec, W), W)
    return spec, W, x, x.control


def _spikes(cfg: ExperimentConfig, spec) -> list[SpikeWindow]:
    s = cfg.section("spike")
    v = s["v"][0] if spec.k_control == 1 else s["v"]
    return [SpikeWindow(float(s["t0"]), float(e), v) for e in sorted(s["eps"], reverse=True)]


def _kernel_times(cfg: ExperimentConfig, W) -> list[float]:
    kt = cfg.section("verify")["kernel_times"]
    T = W.grid.T
    if kt is None:
        kt = [0.0, T / 4, T / 2, 3 * T / 4, T]
    return [W.grid.times[W.grid.index(float(t))] for t in kt]


def _header(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed, **extra}


def _write_rows(path: Path, header: Mapping, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(a)) if isinstance(a, (float, np.floating)) else a for a in r])


def _write_json(path: Path, cfg: ExperimentConfig, payload: Mapping) -> None:
    body = {"config_hash": cfg.hash, "seed": cfg.seed, **payload}
    with open(path, "w") as fh:
        json.dump(_plain(body), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _manifest(cfg: ExperimentConfig, command: str, files: Sequence[str], started: float) -> None:
    data = {
        "command": command,
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "config": cfg.raw,
        "files": sorted(files),
        "workers": cfg.workers,
    }
    with open(cfg.out / f"{command}_manifest.json", "w") as fh:
        # timestamps stay out of the data files; the manifest is the only place they appear
        json.dump(_plain({**data, "elapsed_seconds": round(time.time() - started, 3)}), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig) -> int:
    t0 = time.time()
    spec, W, x, u = _forward(cfg)
    files = ["trajectory.csv"]
    write_csv(x, cfg.out / "trajectory.csv", _header(cfg, scenario=spec.name))
    if cfg.section("output")["binary"]:
        write_binary(x, cfg.out / "trajectory.trjb")
        files.append("trajectory.trjb")
    spikes = _spikes(cfg, spec) if cfg.section("control")["kind"] == "constant" else []
    if spikes:
        ue = spike(u, spikes[0], W.grid)
        xe = simulate_state(spec, ue, W, label="spiked")
        write_csv(xe, cfg.out / "trajectory_spiked.csv", _header(cfg, scenario=spec.name, eps=spikes[0].width))
        files.append("trajectory_spiked.csv")
    mean, se = cost(spec, x, u)
    _write_json(cfg.out / "simulate.json", cfg, {"cost": mean, "cost_stderr": se, "provenance": x.provenance})
    files.append("simulate.json")
    _manifest(cfg, "simulate", files, t0)
    log.info("simulated %d paths of %s; cost %.6g +- %.2g", W.M, spec.name, mean, se)
    return 0


def cmd_adjoint(cfg: ExperimentConfig) -> int:
    t0 = time.time()
    spec, W, x, u = _forward(cfg)
    adj = solve_absde(spec, x, u, W, _regression(cfg))
    g = W.grid
    rows = []
    for i in range(g.N + 1):
        for a in range(spec.d_state):
            rows.append((g.times[i], a, float(adj.p[:, i, a].mean()), float(adj.q[:, i, a].mean(axis=0).sum()) if i < g.N else 0.0))
    _write_rows(cfg.out / "adjoint.csv", _header(cfg, scenario=spec.name), ["t", "component", "p_mean", "q_mean"], rows)
    payload = {"diagnostics": adj.diagnostics_json()}
    files = ["adjoint.csv", "adjoint.json"]
    if cfg.section("control")["kind"] == "constant" and isinstance(u, ControlPath):
        w = _spikes(cfg, spec)[-1]
        y = simulate_first_variation(spec, x, u, w, W)
        z = simulate_second_variation(spec, x, y, u, w, W)
        payload["duality_first"] = duality_residual_first(spec, y, adj, w, x).as_dict()
        payload["duality_second"] = duality_residual_second(spec, y, z, adj, w, x).as_dict()
    if cfg.section("verify")["pipeline"] in ("density", "both"):
        from .hilbert import solve_first_adjoint_h

        h = solve_first_adjoint_h(spec, x, u, W, _regression(cfg))
        payload["hilbert_head_vs_minus_p"] = float(np.max(np.abs(h.p_head + adj.p[:, : g.N + 1])))
    _write_json(cfg.out / "adjoint.json", cfg, payload)
    _manifest(cfg, "adjoint", files, t0)
    log.info("adjoint solved; worst regression residual %.3g", max(adj.diagnostics.get("residual", [0.0]), default=0.0))
    return 0


def _verify_core(cfg: ExperimentConfig, spec, W, x, u, tag: str) -> tuple[bool, dict, list[str]]:
    adj = solve_absde(spec, x, u, W, _regression(cfg))
    vcfg = cfg.section("verify")
    times = _kernel_times(cfg, W)
    kern = p00_kernel(spec, times, adj, W, x)
    files = []
    results: dict[str, Any] = {}
    ok = True
    rep = check_variational_inequality(spec, u, adj, kern, x, tol=float(vcfg["tol"]), k_se=float(vcfg["k_se"]))
    results["variational_inequality"] = rep.to_json()
    _write_rows(cfg.out / f"{tag}_delta.csv", _header(cfg, scenario=spec.name), ["t", "v", "delta", "stderr"], rep.csv_rows())
    files.append(f"{tag}_delta.csv")
    ok &= rep.verdict
    _write_rows(
        cfg.out / f"{tag}_p00.csv", _header(cfg, scenario=spec.name, method=kern.method), ["t", "i", "j", "value", "stderr"], kern.to_rows()
    )
    files.append(f"{tag}_p00.csv")
    if vcfg["pipeline"] in ("density", "both"):
        from .hilbert import extract_p00, solve_second_adjoint_h

        P = solve_second_adjoint_h(spec, x, u, adj, W, _regression(cfg))
        kh = extract_p00(P, times).as_curvature()
        diff = np.abs(kh.matrices - kern.matrices)
        se = np.sqrt(kh.std_errors**2 + kern.std_errors**2)
        agree = bool(np.all(diff <= 3 * se + 1e-12))
        results["cross_pipeline"] = {"max_abs_diff": float(diff.max()), "agree_3se": agree}
        ok &= agree
        if vcfg["pipeline"] == "density":
            rep_h = check_variational_inequality(spec, u, adj, extract_p00(P), x, tol=float(vcfg["tol"]), k_se=float(vcfg["k_se"]))
            results["variational_inequality_density"] = rep_h.to_json()
            ok &= rep_h.verdict
    return ok, {"results": results, "adjoint": adj, "kernel": kern}, files


def cmd_verify(cfg: ExperimentConfig) -> int:
    t0 = time.time()
    spec, W, x, u = _forward(cfg)
    ok, out, files = _verify_core(cfg, spec, W, x, u, "verify")
    results = out["results"]
    if cfg.section("verify")["expansion"] and isinstance(u, ControlPath) and len(spec.control_set) > 1:
        exp = cost_expansion_check(spec, u, _spikes(cfg, spec), out["adjoint"], out["kernel"], W, x)
        results["cost_expansion"] = exp.to_json()
        _write_rows(
            cfg.out / "expansion.csv",
            _header(cfg, scenario=spec.name),
            ["eps", "remainder", "stderr", "remainder_first_order", "stderr_first_order"],
            zip(exp.eps, exp.remainder, exp.remainder_se, exp.remainder_first, exp.remainder_first_se),
        )
        files.append("expansion.csv")
    vi = results["variational_inequality"]
    _write_json(cfg.out / "verify.json", cfg, {"verdict": "pass" if ok else "fail", **results})
    files.append("verify.json")
    _manifest(cfg, "verify", files, t0)
    print(f"{spec.name}: worst gap {vi['worst_gap']:.4g} (stderr {vi['gap_stderr']:.2g}), verdict {'pass' if ok else 'fail'}", file=sys.stderr)
    for v in vi["violations"][:20]:
        print(f"  violation t={v['t']:.6g} v={v['v']} gap={v['gap']:.4g}", file=sys.stderr)
    if len(vi["violations"]) > 20:
        print(f"  ... {len(vi['violations']) - 20} more", file=sys.stderr)
    return 0 if ok else 1


def cmd_converge(cfg: ExperimentConfig) -> int:
    """Spike-ladder slopes, mollification studies and a dt-halving study."""
    t0 = time.time()
    spec, W, x, u = _forward(cfg)
    if not isinstance(u, ControlPath) or cfg.section("control")["kind"] != "constant":
        raise ConfigError("converge needs a constant control")
    g = W.grid
    spikes = _spikes(cfg, spec)
    rows = []
    for w in spikes:
        xe = simulate_state(spec, spike(u, w, g), W)
        y = simulate_first_variation(spec, x, u, w, W)
        z = simulate_second_variation(spec, x, y, u, w, W)
        for name, vals in (
            ("y", y.values),
            ("r1", xe.values - x.values - y.values),
            ("r2", xe.values - x.values - y.values - z.values),
        ):
            s = sup_sq(vals, g)
            rows.append((name, w.width, float(s.mean()), float(s.std(ddof=1) / np.sqrt(W.M))))
    files = ["variation_orders.csv"]
    _write_rows(cfg.out / "variation_orders.csv", _header(cfg, scenario=spec.name), ["series", "x", "y", "stderr"], rows)
    slopes = {}
    for name in ("y", "r1", "r2"):
        sel = [r for r in rows if r[0] == name]
        slopes[name] = fit_slope([r[1] for r in sel], [r[2] for r in sel])
    n_list = [int(n) for n in cfg.section("mollify")["n"]]
    # past-integral error of mollified measures on the base trajectory
    mrows = []
    mid = g.N // 2
    seg = x.segment(mid)
    for k, mu in enumerate(spec.mu_b):
        exact = past_integral(seg, mu)
        for n in n_list:
            approx = past_integral(seg, mollify(mu, n, g.L))
            mrows.append((f"mu_b[{k}]", n, float(np.sqrt(np.mean((approx - exact) ** 2))), 0.0))
    if mrows:
        _write_rows(cfg.out / "mollify_past.csv", _header(cfg, scenario=spec.name, t=g.times[mid]), ["series", "x", "y", "stderr"], mrows)
        files.append("mollify_past.csv")
    adj = solve_absde(spec, x, u, W, _regression(cfg))
    prow = []
    for s in (0.0, g.T / 2):
        s = g.times[g.index(s)]
        rep = p00_convergence_study(spec, s, n_list, adj, u, W, x)
        for n, e, se in zip(rep.n_list, rep.errors, rep.error_se):
            prow.append((f"p00_s{s:g}", n, float(e), float(se)))
    _write_rows(cfg.out / "p00_mollify.csv", _header(cfg, scenario=spec.name), ["series", "x", "y", "stderr"], prow)
    files.append("p00_mollify.csv")
    # regularized variations: sup distance to the exact first variation
    rrows = []
    w = spikes[-1]
    y = simulate_first_variation(spec, x, u, w, W)
    for n in n_list:
        yn, _ = simulate_regularized_variations(spec, n, x, u, w, W)
        s = sup_sq(yn.values - y.values, g)
        rrows.append(("y_n", n, float(s.mean()), float(s.std(ddof=1) / np.sqrt(W.M))))
    _write_rows(cfg.out / "regularized_variations.csv", _header(cfg, scenario=spec.name), ["series", "x", "y", "stderr"], rrows)
    files.append("regularized_variations.csv")
    # dt halving of the cost on coupled bundles
    from .paths import coarsen

    drow = []
    if g.N % 2 == 0 and g.L % 2 == 0:
        for f in (2, 1):
            Wf = coarsen(W, f) if f > 1 else W
            uf = ControlPath.constant(cfg.section("control")["value"], Wf.grid.N)
            xf = simulate_state(spec, uf, Wf)
            m, se = cost(spec, xf, uf)
            drow.append(("cost", Wf.grid.dt, m, se))
    _write_rows(cfg.out / "dt_refinement.csv", _header(cfg, scenario=spec.name), ["series", "x", "y", "stderr"], drow)
    files.append("dt_refinement.csv")
    _write_json(cfg.out / "converge.json", cfg, {"slopes": slopes})
    files.append("converge.json")
    _manifest(cfg, "converge", files, t0)
    log.info("variation slopes %s", {k: round(v, 3) for k, v in slopes.items()})
    return 0


def cmd_portfolio(cfg: ExperimentConfig) -> int:
    t0 = time.time()
    raw = cfg.raw
    if raw["scenario"]["name"] != "portfolio":
        raw["scenario"] = {"name": "portfolio", "params": raw["scenario"].get("params", {}) if raw["scenario"]["name"] == "portfolio" else {}}
    if raw["control"]["kind"] == "constant" and len(raw["control"]["value"]) != 2:
        raw["control"] = {"kind": "policy", "policy": "optimal", "value": [0.0, 0.0]}
    spec, W, x, u = _forward(cfg)
    ok, out, files = _verify_core(cfg, spec, W, x, u, "portfolio")
    adj = out["adjoint"]
    g = W.grid
    claim = {
        "max_abs_p_stock": float(np.abs(adj.p[:, : g.N + 1, 0]).max()),
        "max_abs_q_stock": float(np.abs(adj.q[:, : g.N, 0]).max()),
    }
    best = out["results"]["variational_inequality"]
    _write_json(cfg.out / "portfolio.json", cfg, {"verdict": "pass" if ok else "fail", "stock_adjoint": claim, **out["results"]})
    files.append("portfolio.json")
    _manifest(cfg, "portfolio", files, t0)
    print(f"portfolio: worst gap {best['worst_gap']:.4g}, verdict {'pass' if ok else 'fail'}; "
          f"max |p_S| {claim['max_abs_p_stock']:.3g}", file=sys.stderr)
    return 0 if ok else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "adjoint": cmd_adjoint,
    "verify": cmd_verify,
    "converge": cmd_converge,
    "portfolio": cmd_portfolio,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delaysmp", description="Maximum-principle experiments for controlled delay equations.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="TOML experiment config")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--workers", type=int, default=1, help="cap on internal parallelism")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--paths", type=int, help="Monte Carlo paths")
    ap.add_argument("--steps", type=int, help="time steps N")
    ap.add_argument("--delay", type=float)
    ap.add_argument("--horizon", type=float)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(
            args.config,
            {
                "mc.seed": args.seed,
                "mc.paths": args.paths,
                "grid.N": args.steps,
                "grid.delay": args.delay,
                "grid.T": args.horizon,
                "output.dir": args.out,
            },
        )
    except (ConfigError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cfg.workers = max(1, int(args.workers))
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

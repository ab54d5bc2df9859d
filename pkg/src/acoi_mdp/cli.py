"""Command-line front end: ``acoi-mdp CONFIG {solve,vanish,check,simulate}``.

Exit codes: 0 success (including negative findings), 2 configuration error,
3 solver failure, 4 missing prerequisite, 5 censored simulation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import conditions as cond
from .demand import DemandFamily
from .discounted import DEFAULT_MAX_ITER, DEFAULT_TOL, solve_dcoe
from .errors import (AcoiError, CensoringError, InsufficientSequenceError, NonConvergenceError)
from .mdp import FiniteMdp, load_mdp
from .models import (Grid, HoldingCost, InvariantModelSpec, OrderCost, PcInventorySpec,
                     UcProductionSpec, build_circle_mdp, build_invariant, build_pc_inventory,
                     build_uc_production)
from .vanishing import (DiscountSchedule, acoi_residual, acoi_to_policy, average_cost_exact,
                        check_assumption_uc_bounded, check_condition_B, run_from_dict,
                        run_schedule, trace_rows, uc_bound_stable)

log = logging.getLogger("acoi_mdp")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PREREQ, EXIT_CENSOR = 0, 2, 3, 4, 5
# long enough that the (1 - alpha) * ||h|| bias of the last point drops below 1e-6
CLI_SCHEDULE_POINTS = 30
BUILTINS = ("pc_inventory", "uc_production", "invariant", "partial_invariant", "circle")


class ConfigError(AcoiError, ValueError):
    pass


class MissingPrerequisite(AcoiError, RuntimeError):
    pass


# -- configuration ------------------------------------------------------------
@dataclass
class RunConfig:
    model: dict
    schedule: dict = field(default_factory=lambda: {"rule": "geometric",
                                                    "n_points": CLI_SCHEDULE_POINTS})
    tolerances: dict = field(default_factory=dict)
    probes: Optional[list] = None
    seed: int = 0
    output_dir: str = "out"
    window: int = 3
    ref_state: Optional[int] = None
    simulation: dict = field(default_factory=dict)
    conditions: dict = field(default_factory=dict)
    digest: str = ""

    @property
    def solver_tol(self) -> float:
        return float(self.tolerances.get("solver", DEFAULT_TOL))

    @property
    def acoi_tol(self) -> float:
        return float(self.tolerances.get("acoi", 1e-6))

    @property
    def max_iter(self) -> int:
        return int(self.tolerances.get("max_iter", DEFAULT_MAX_ITER))

    @property
    def ci_level(self) -> float:
        return float(self.tolerances.get("ci_level", 0.99))

    def alphas(self) -> tuple:
        rule = self.schedule.get("rule", "geometric")
        if rule == "geometric":
            n = int(self.schedule.get("n_points", CLI_SCHEDULE_POINTS))
            return tuple(1.0 - 2.0 ** -k for k in range(1, n + 1))
        if rule == "custom":
            return tuple(float(a) for a in self.schedule["alphas"])
        raise ConfigError(f"unknown schedule rule {rule!r}")


_KNOWN = {"model", "schedule", "tolerances", "probes", "seed", "output_dir", "window",
          "ref_state", "simulation", "conditions"}


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    model = data.get("model")
    if not isinstance(model, dict):
        raise ConfigError("config needs a 'model' object")
    sources = [k for k in ("builtin", "path", "inline") if k in model]
    if len(sources) != 1:
        raise ConfigError("model must name exactly one of 'builtin', 'path', 'inline'")
    if "builtin" in model and model["builtin"] not in BUILTINS:
        raise ConfigError(f"unknown builtin model {model['builtin']!r}; choose from {BUILTINS}")
    if "path" in model:
        model = dict(model)
        model["path"] = str((base_dir / model["path"]).resolve())
    kwargs = {k: v for k, v in data.items() if k != "model"}
    cfg = RunConfig(model=model, **kwargs)
    try:
        alphas = cfg.alphas()
        if cfg.schedule.get("rule", "geometric") == "geometric" and len(alphas) < 3:
            raise ConfigError("schedule needs n_points >= 3")
        # a short custom list is fine for solve; vanish re-checks the length
        if not alphas or any(not 0.0 < a < 1.0 for a in alphas) or any(
                b <= a for a, b in zip(alphas, alphas[1:])):
            raise ConfigError("alphas must be strictly increasing in (0, 1)")
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    cfg.digest = hashlib.sha256(text.encode()).hexdigest()
    return cfg


def _spec_from_params(name: str, params: dict):
    params = dict(params)
    for key, cls in (("kappa", OrderCost), ("psi", HoldingCost)):
        if key in params:
            params[key] = cls(**params[key])
    if "demand" in params:
        params["demand"] = DemandFamily.from_dict(params["demand"])
    return PcInventorySpec(**params) if name == "pc_inventory" else UcProductionSpec(**params)


def _default_invariant(partial: bool, params: dict) -> InvariantModelSpec:
    n = int(params.get("n_states", 8))
    m = int(params.get("n_actions", 3))
    rng = np.random.default_rng(int(params.get("seed", 0)))
    kernel = rng.dirichlet(np.ones(n), size=m)
    weight = np.asarray(params["weight"], dtype=float) if "weight" in params else None
    cost = np.asarray(params["cost"], dtype=float) if "cost" in params else rng.uniform(0, 1, (n, m))
    if "action_kernel" in params:
        kernel = np.asarray(params["action_kernel"], dtype=float)
    if not partial:
        return InvariantModelSpec(kernel, cost, weight)
    w = weight if weight is not None else 1.0 + np.arange(n, dtype=float)
    b, lam, lam_p = params.get("partial", (2.0, 0.5, 0.9))
    # outside the invariant region every action jumps back to state 0
    outside = np.zeros((n, m, n))
    outside[:, :, 0] = 1.0
    return InvariantModelSpec(kernel, cost, w, (b, lam, lam_p), outside)


@dataclass
class Model:
    mdp: FiniteMdp
    name: str
    spec: Any = None
    bound: Optional[np.ndarray] = None


def build_model(cfg: RunConfig) -> Model:
    src = cfg.model
    try:
        if "path" in src:
            return Model(load_mdp(src["path"]), "file")
        if "inline" in src:
            return Model(FiniteMdp.from_dict(src["inline"]), "inline")
        name = src["builtin"]
        params = src.get("params", {})
        grid = Grid(**src["grid"]) if "grid" in src else None
        if name in ("pc_inventory", "uc_production"):
            spec = _spec_from_params(name, params)
            build = build_pc_inventory if name == "pc_inventory" else build_uc_production
            return Model(build(spec, grid), name, spec)
        if name == "circle":
            return Model(build_circle_mdp(int(params.get("n_states", 60))), name)
        spec = _default_invariant(name == "partial_invariant", params)
        mdp, bound = build_invariant(spec)
        return Model(mdp, name, spec, bound)
    except OSError as exc:
        raise ConfigError(f"cannot read model: {exc}") from exc
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad model parameters: {exc}") from exc


def _probes(cfg: RunConfig, mdp: FiniteMdp) -> list[int]:
    if cfg.probes is None:
        k = min(12, mdp.n_states)
        return sorted({int(i) for i in np.linspace(0, mdp.n_states - 1, k).round()})
    bad = [p for p in cfg.probes if not (isinstance(p, int) and 0 <= p < mdp.n_states)]
    if bad:
        raise ConfigError(f"probe states out of range: {bad}")
    return list(cfg.probes)


# -- output -------------------------------------------------------------------
def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_json(path: Path, payload: dict, cfg: RunConfig) -> None:
    body = {"config_sha256": cfg.digest, "seed": cfg.seed, **payload}
    _write_atomic(path, json.dumps(_clean(body), indent=1, sort_keys=True) + "\n")


def write_csv(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _write_atomic(path, buf.getvalue())


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir)


# -- commands -----------------------------------------------------------------
def cmd_solve(cfg: RunConfig, plots: bool = False) -> int:
    model = build_model(cfg)
    mdp = model.mdp
    probes = _probes(cfg, mdp)
    ref = cfg.ref_state or 0
    rows = []
    sols = []
    for alpha in cfg.alphas():
        sol = solve_dcoe(mdp, alpha, cfg.solver_tol, cfg.max_iter, ref_state=ref)
        sols.append(sol)
        rows.append([alpha, sol.residual, sol.iterations,
                     (1 - alpha) * float(sol.values.min()),
                     sol.gain + (1 - alpha) * float(sol.relative[ref])]
                    + [float(sol.values[p]) for p in probes])
    out = _out(cfg)
    for sol in sols:
        write_json(out / f"dcoe_{sol.alpha:.12g}.json", sol.to_dict(), cfg)
    write_csv(out / "dcoe_summary.csv",
              ["alpha", "residual", "iterations", "scaled_min_value", "scaled_ref_value"]
              + [f"v_{p}" for p in probes], rows)
    return EXIT_OK


def _vanish(cfg: RunConfig, model: Model):
    mdp = model.mdp
    schedule = DiscountSchedule(cfg.alphas(), cfg.ref_state if mdp.model_class == "UC" else None)
    run = run_schedule(mdp, schedule, mdp.model_class, cfg.solver_tol, window=cfg.window,
                       max_iter=cfg.max_iter, ref_state=cfg.ref_state)
    cert = acoi_residual(mdp, run.rho_star, run.h_lower, cfg.acoi_tol)
    return run, cert


def cmd_vanish(cfg: RunConfig, plots: bool = False) -> int:
    model = build_model(cfg)
    mdp = model.mdp
    probes = _probes(cfg, mdp)
    run, cert = _vanish(cfg, model)
    upper = acoi_residual(mdp, run.rho_star, run.h_upper, cfg.acoi_tol)
    payload = {"certificate": cert.to_dict(),
               "counterpart_max_residual": upper.max_residual,
               "envelope_gap": float(run.tail_oscillation.max()),
               "rho_sequence": run.rho_sequence.tolist()}
    if cert.verdict:
        pol = acoi_to_policy(mdp, cert)
        payload["policy_average_cost"] = average_cost_exact(mdp, pol).tolist()
    out = _out(cfg)
    write_json(out / "acoi_certificate.json", payload, cfg)
    write_json(out / "vanish_run.json", {"model": model.name, "run": run.to_full_dict()}, cfg)
    write_csv(out / "vanish_trace.csv",
              ["alpha", "one_minus_alpha_times_value"] + [f"h_{p}" for p in probes],
              trace_rows(run, probes))
    if plots:
        from .plotting import plot_vanish
        plot_vanish(run, probes, mdp.states, out)
    return EXIT_OK


def _load_run(cfg: RunConfig, model: Model):
    path = _out(cfg) / "vanish_run.json"
    if path.exists():
        return run_from_dict(json.loads(path.read_text())["run"])
    if cfg.conditions.get("run_prerequisites", False):
        return _vanish(cfg, model)[0]
    raise MissingPrerequisite(f"{path} not found; run 'vanish' first or set "
                              "conditions.run_prerequisites")


def cmd_check(cfg: RunConfig, plots: bool = False) -> int:
    model = build_model(cfg)
    mdp = model.mdp
    run = _load_run(cfg, model)
    if run.h_per_alpha.shape[1] != mdp.n_states:
        raise MissingPrerequisite("stored vanish run does not match the configured model")
    eps = float(cfg.conditions.get("eps", 1e-3))
    delta = float(cfg.conditions.get("delta", 0.05))
    eta = float(cfg.conditions.get("eta", 1e-3))
    n_levels = int(cfg.conditions.get("ui_levels", 8))
    total, passes = cond.gus_test(mdp)
    g = mdp.weight if run.mode == "UC" else run.h_upper
    states = []
    for s in range(mdp.n_states):
        K = cond.select_K_eps(mdp, s, eps, run.v_per_alpha)
        levels = np.unique(np.quantile(g, np.linspace(0.0, 1.0, n_levels)))
        # one level past the largest value so a bounded g shows a vanishing tail
        levels = np.append(levels, np.nextafter(levels[-1], np.inf))
        wit = cond.minimal_majorizer(mdp, s, K, eps, g=np.maximum(g, 0.0), levels=levels)
        states.append({"state": s, "K_eps": wit.K_eps.tolist(), "nu_total": wit.nu_total,
                       "ui_tail": wit.ui_tail})
    nu_global = np.asarray(mdp.kernel.max(axis=0).todense()).ravel()
    try:
        ego = cond.egoroff_extract(run.lower_env, run.h_lower, nu_global, delta, eta)
        egoroff = {"status": "certified", **ego.to_dict(),
                   "reverified": cond.verify_egoroff(ego, run.lower_env, run.h_lower,
                                                     nu_global, delta, eta)}
    except InsufficientSequenceError as exc:
        egoroff = {"status": "inconclusive", "reason": str(exc)}
    if run.mode == "UC":
        bounded = {"max_weighted_norm": check_assumption_uc_bounded(run, mdp.weight),
                   "stable": uc_bound_stable(run, mdp.weight)}
    else:
        sup, ok = check_condition_B(run)
        bounded = {"sup_h": sup.tolist(), "nonexplosive": ok}
    if model.bound is not None:
        bounded["invariant_bound_max"] = float(np.max(model.bound / mdp.weight))
        if run.mode == "PC":
            bounded["max_weighted_norm"] = float(max(np.max(np.abs(h) / mdp.weight)
                                                     for h in run.h_per_alpha))
    payload = {"conditions": {"gus_test": {"nu_total": total, "passes": passes},
                              "per_state": states, "egoroff": egoroff,
                              "boundedness": bounded,
                              "recheck_inputs": {"eps": eps, "delta": delta, "eta": eta}}}
    write_json(_out(cfg) / "conditions.json", payload, cfg)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, plots: bool = False) -> int:
    from . import simulation as sim

    name = cfg.model.get("builtin")
    if name not in ("pc_inventory", "uc_production"):
        raise ConfigError("simulate needs the pc_inventory or uc_production builtin model")
    model = build_model(cfg)
    spec = model.spec
    opts = cfg.simulation
    n_reps = int(opts.get("n_reps", 100_000))
    cap = int(opts.get("cap", sim.DEFAULT_CAP))
    reports = []
    bounds: dict = {}
    if name == "pc_inventory":
        starts = opts.get("starts", [spec.L + 5.0])
        policy = sim.BaseStockPolicy(spec.L, float(opts.get("target", spec.M)))
        for x0 in starts:
            reports.append(sim.hitting_time(spec, policy, float(x0), "below_L", n_reps, cap,
                                            cfg.seed, ci_level=cfg.ci_level))
        H = {str(x): sim.compute_H(spec, float(x)).__dict__ for x in opts.get("H_points", starts)}
        bounds["H"] = H
        bounds["drift"] = {k: v for k, v in sim.verify_comparison_drift(
            spec, (spec.L - 5.0, spec.L + 10.0), 31).items() if k != "rows"}
        run_path = _out(cfg) / "vanish_run.json"
        run = (run_from_dict(json.loads(run_path.read_text())["run"]) if run_path.exists()
               else _vanish(cfg, model)[0])
        probes = _probes(cfg, model.mdp)
        hb = sim.verify_h_bound(run, spec, float(opts.get("eps_bar", 0.1)), probes,
                                model.mdp.states)
        bounds["h_bound"] = {k: v for k, v in hb.items() if k != "rows"}
        if plots:
            from .plotting import plot_h_bound
            plot_h_bound(hb["rows"], _out(cfg))
    else:
        starts = opts.get("starts", [spec.L_tilde + 3.0])
        policy = sim.ZeroOrderPolicy()
        rhs = float(opts.get("bound_rhs", math.inf))
        for x0 in starts:
            reports.append(sim.hitting_time(spec, policy, float(x0), "zero", n_reps, cap, cfg.seed,
                                            bound_rhs=rhs, ci_level=cfg.ci_level))
        bounds["drift"] = {k: v for k, v in sim.verify_comparison_drift(
            spec, (spec.L, spec.L_tilde + 10.0), 31).items() if k != "rows"}
    bounds["hitting"] = [r.to_dict() for r in reports]
    write_json(_out(cfg) / "bounds.json", bounds, cfg)
    write_csv(_out(cfg) / "sim_report.csv",
              ["start_state", "n_reps", "mean_tau", "ci_halfwidth", "mean_cost_to_tau",
               "mean_kappa_term", "bound_rhs", "verdict", "censored"],
              [[r.start_state, r.n_reps, r.mean_tau, r.ci_halfwidth, r.mean_cost_to_tau,
                r.mean_kappa_term, r.bound_rhs, r.verdict, r.censored] for r in reports])
    if plots:
        from .plotting import plot_hitting
        plot_hitting(reports, _out(cfg))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "vanish": cmd_vanish, "check": cmd_check, "simulate": cmd_simulate}


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(prog="acoi-mdp", description=__doc__.splitlines()[0])
    parser.add_argument("config", help="JSON run configuration")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--tol", type=float, help="solver tolerance")
    parser.add_argument("--plots", action="store_true", help="also render PNG figures")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cfg_path = Path(args.config)
    try:
        cfg = parse_config(cfg_path.read_text(), cfg_path.parent)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg.seed = args.seed
        if args.out:
            cfg.output_dir = args.out
        if args.tol is not None:
            if args.tol <= 0:
                raise ConfigError("tol must be positive")
            cfg.tolerances = {**cfg.tolerances, "solver": args.tol}
        return COMMANDS[args.command](cfg, args.plots)
    except (ConfigError, OSError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        log.error("solver failure: %s", exc)
        out = Path(args.out) if args.out else None
        try:
            out = out or Path(json.loads(cfg_path.read_text()).get("output_dir", "out"))
            _write_atomic(out / "solver_failure.json", json.dumps(_clean(
                {"alpha": exc.alpha, "residual": exc.residual, "iterations": exc.iterations,
                 "message": str(exc)}), indent=1) + "\n")
        except (OSError, ValueError):
            pass
        return EXIT_SOLVER
    except MissingPrerequisite as exc:
        log.error("missing prerequisite: %s", exc)
        return EXIT_PREREQ
    except CensoringError as exc:
        log.error("censoring: %s", exc)
        return EXIT_CENSOR
    except AcoiError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

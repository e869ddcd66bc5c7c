"""Config-driven command line: simulate | reach | barrier-eval | check |
smooth | report.

Exit status: 0 when every requested check passes, 2 when any check fails,
1 on usage or configuration errors.  Every run writes a manifest listing the
emitted artifacts together with the config hash, so reruns are auditable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .barrier import (BarrierFn, RelaxFn, candidate_sign_check,
                      counterexample_barrier_fn, infinitesimal_check,
                      marginal_barrier, monotonicity_check, user_barrier)
from .config import ConfigError, RawConfig, Scenario, build_scenario, load_config
from .dynamics import lipschitz_estimate
from .expr import compile_expression
from .geometry import SetSpec
from .reachability import cloud_to_csv, filippov_check, reach, save_cloud
from .smoothing import (ConverseResolution, build_time_partition,
                        converse_smooth_barrier, smooth_on_compact)
from .solver import solution_bundle
from .verify import (SafetyProblem, SamplePlan, BundlePlanV, nagumo_check,
                     prop1_check, simulate_safety_check)


class CliError(Exception):
    pass


def _out_dir(args, scn) -> Path:
    out = args.out or scn.out_dir or os.environ.get("SAFEREACH_OUT", "safereach-out")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


class Manifest:
    def __init__(self, command: str, cfg: RawConfig, out: Path):
        self.data = {"tool_version": __version__, "config_hash": cfg.hash(),
                     "command": command, "wall_time_s": None, "artifacts": []}
        self.out = out
        self.t0 = time.time()

    def add(self, path: Path) -> Path:
        self.data["artifacts"].append(str(path.relative_to(self.out)))
        return path

    def write(self) -> None:
        self.data["wall_time_s"] = round(time.time() - self.t0, 3)
        path = self.out / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True))


def _require(value, message: str):
    if value is None:
        raise CliError(message)
    return value


def _get_set(scn: Scenario, name: str) -> SetSpec:
    if name not in scn.sets:
        raise CliError(f"unknown set '{name}' (defined: {sorted(scn.sets)})")
    return scn.sets[name]


def _build_barrier(scn: Scenario, jobs: int = 1) -> BarrierFn:
    cfg = scn.raw
    kind = _require(cfg.get("barrier", "kind"), "config needs a [barrier] section with kind")
    band = cfg.get("barrier", "band", 0.1)
    if kind == "counterexample":
        return counterexample_barrier_fn(band_width=band)
    if kind == "user":
        expr = _require(cfg.get("barrier", "expression"), "[barrier] user needs expression")
        dim = scn.system.dim if scn.system else 2
        return user_barrier(expr, dim, band_width=band)
    if kind == "marginal":
        X_o = _get_set(scn, _require(cfg.get("barrier", "X_o"), "[barrier] marginal needs X_o"))
        _require(scn.system, "[barrier] marginal needs a [system]")
        return marginal_barrier(scn.system, X_o, scn.solver,
                                directions=cfg.get("barrier", "directions",
                                                   scn.bundle_directions),
                                switches=scn.bundle_switches,
                                seed=scn.seed, band_width=band)
    if kind == "converse":
        X_o = _get_set(scn, _require(cfg.get("barrier", "X_o"), "[barrier] converse needs X_o"))
        _require(scn.system, "[barrier] converse needs a [system]")
        if scn.system.kind != "singleton":
            raise CliError("[barrier] converse needs a single-valued system")
        res = ConverseResolution(
            s_range=tuple(range(cfg.get("barrier", "s_lo", -8),
                                cfg.get("barrier", "s_hi", 0) + 1)),
            k_max=cfg.get("barrier", "k_max", 6))
        return converse_smooth_barrier(scn.system.base_field, X_o, scn.solver, res)
    raise CliError(f"unknown barrier kind '{kind}'")


def _parse_relax(text: str) -> RelaxFn:
    if text in (None, "zero"):
        return RelaxFn.zero()
    if text.startswith("linear:"):
        return RelaxFn.linear(float(text.split(":", 1)[1]))
    if text.startswith("classK:"):
        return RelaxFn.extended_classK(text.split(":", 1)[1])
    if text.startswith("minimal:"):
        return RelaxFn.minimal(text.split(":", 1)[1])
    raise CliError(f"unknown relaxation '{text}' (zero | linear:L | classK:expr | minimal:expr)")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(scn: Scenario, args, manifest: Manifest) -> int:
    cfg = scn.raw
    _require(scn.system, "simulate needs a [system]")
    X_o = _get_set(scn, _require(cfg.get("simulate", "X_o"), "[simulate] needs X_o"))
    T = cfg.get("simulate", "T", 1.0)
    starts = []
    if scn.sampling_interior:
        starts.append(X_o.sample_interior(scn.sampling_interior, seed=scn.seed,
                                          window=scn.sampling_window))
    if scn.sampling_boundary:
        starts.append(X_o.sample_boundary(scn.sampling_boundary, seed=scn.seed + 1,
                                          window=scn.sampling_window))
    starts = np.vstack(starts)
    for i, x0 in enumerate(starts):
        trajs = solution_bundle(scn.system, x0, T, cfg=scn.solver,
                                m=scn.bundle_directions, switches=scn.bundle_switches,
                                seed=scn.seed, jobs=args.jobs)
        for tr in trajs:
            path = manifest.add(manifest.out / f"traj_{i:03d}_{tr.selector_index:02d}.csv")
            tr.to_csv(path)
    return 0


def cmd_reach(scn: Scenario, args, manifest: Manifest) -> int:
    cfg = scn.raw
    _require(scn.system, "reach needs a [system]")
    x0 = np.asarray(_require(cfg.get("reach", "x0"), "[reach] needs x0"), dtype=float)
    t = _require(cfg.get("reach", "t"), "[reach] needs t")
    from .reachability import BundlePlan

    cloud = reach(scn.system, x0, t, scn.solver,
                  BundlePlan(scn.bundle_directions, scn.bundle_switches, scn.seed),
                  stride=cfg.get("reach", "stride", 1))
    cloud_to_csv(cloud, manifest.add(manifest.out / "reach.csv"))
    save_cloud(cloud, manifest.add(manifest.out / "reach.rch"))
    return 0


def cmd_barrier_eval(scn: Scenario, args, manifest: Manifest) -> int:
    cfg = scn.raw
    B = _build_barrier(scn, args.jobs)
    window = cfg.get("barrier-eval", "window")
    _require(window, "[barrier-eval] needs window")
    dim = len(window) // 2
    nx = cfg.get("barrier-eval", "nx", 21)
    tg = cfg.get("barrier-eval", "tgrid", [0.0, 1.0, 5])
    ts = np.linspace(tg[0], tg[1], int(tg[2]))
    axes = [np.linspace(window[i], window[dim + i], nx) for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    rows = []
    for t in ts:
        vals = B.evaluate_many(np.full(len(pts), t), pts)
        rows.append(np.column_stack([np.full(len(pts), t), pts, vals]))
    data = np.vstack(rows)
    header = "t," + ",".join(f"x{i + 1}" for i in range(dim)) + ",B"
    path = manifest.add(manifest.out / "barrier_grid.csv")
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    return 0


def cmd_smooth(scn: Scenario, args, manifest: Manifest) -> int:
    cfg = scn.raw
    h_text = _require(cfg.get("smooth", "h"), "[smooth] needs h expression over t,x1..xn")
    region = _get_set(scn, _require(cfg.get("smooth", "region"), "[smooth] needs region set"))
    dim = region.dim
    variables = ("t",) + tuple(f"x{i + 1}" for i in range(dim))
    hx = compile_expression(h_text, variables)
    h = lambda t, X: hx(np.column_stack([np.full(len(np.atleast_2d(X)), t),
                                         np.atleast_2d(X)]))
    box = region.bounding_box()
    if box is None:
        raise CliError("[smooth] region must be bounded")
    n = cfg.get("smooth", "grid_n", 41)
    axes = [np.linspace(box[0][i], box[1][i], n) for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    keep = np.array([region.contains(p) for p in pts])
    grid = pts[keep]
    if len(grid) == 0:
        raise CliError("[smooth] region grid is empty")
    part = build_time_partition(h, grid, cfg.get("smooth", "k_max", 3),
                                table_res=cfg.get("smooth", "table_res", 256))
    g = smooth_on_compact(h, part, w_tol=cfg.get("smooth", "w_tol"))
    out_n = cfg.get("smooth", "out_n", 9)
    ts = np.linspace(0.0, part.nodes[-1], out_n)
    vals = g.sample_times(ts, grid)
    rows = []
    for i, t in enumerate(ts):
        rows.append(np.column_stack([np.full(len(grid), t), grid, vals[i]]))
    header = "t," + ",".join(f"x{i + 1}" for i in range(dim)) + ",g"
    path = manifest.add(manifest.out / "smoothed_grid.csv")
    np.savetxt(path, np.vstack(rows), delimiter=",", header=header, comments="",
               fmt="%.17g")
    info = {"u_counts": list(part.u_counts), "eta": part.eta.tolist(),
            "sigma": g.sigma, "certificate": g.certificate}
    manifest.add(manifest.out / "smooth_info.json").write_text(
        json.dumps(info, indent=2, sort_keys=True))
    return 0


def _run_one_check(name: str, scn: Scenario, args) -> tuple[str, str]:
    cfg = scn.raw
    section = f"check {name}"
    kind = _require(cfg.get(section, "kind"), f"[{section}] needs kind")
    window = scn.sampling_window
    seed = scn.seed
    if kind == "simulate":
        X_o = _get_set(scn, _require(cfg.get(section, "X_o"), f"[{section}] needs X_o"))
        X_u = _get_set(scn, _require(cfg.get(section, "X_u"), f"[{section}] needs X_u"))
        p = SafetyProblem(scn.system, X_o, X_u, cfg.get(section, "T", 1.0), scn.solver,
                          SamplePlan(scn.sampling_boundary, scn.sampling_interior,
                                     seed, window),
                          BundlePlanV(scn.bundle_directions, scn.bundle_switches),
                          hit_tol=cfg.get(section, "tol", 1e-9))
        rep = simulate_safety_check(p)
        return rep.to_json(), ("pass" if rep.passed else "fail")
    if kind == "sign":
        B = _build_barrier(scn, args.jobs)
        X_o = _get_set(scn, _require(cfg.get(section, "X_o"), f"[{section}] needs X_o"))
        X_u = _get_set(scn, _require(cfg.get(section, "X_u"), f"[{section}] needs X_u"))
        rep = candidate_sign_check(B, X_o, X_u, scn.t_grid,
                                   n_init=scn.sampling_interior + scn.sampling_boundary,
                                   n_unsafe=cfg.get(section, "n_samples", 64),
                                   window=window, seed=seed)
        return rep.to_json(), rep.verdict
    if kind == "monotonicity":
        B = _build_barrier(scn, args.jobs)
        X_o = _get_set(scn, _require(cfg.get(section, "X_o"), f"[{section}] needs X_o"))
        starts = X_o.sample_boundary(cfg.get(section, "n_samples", 8), seed=seed,
                                     window=window)
        worst = None
        for x0 in starts:
            trajs = solution_bundle(scn.system, x0, cfg.get(section, "T", 1.0),
                                    cfg=scn.solver, m=scn.bundle_directions,
                                    switches=scn.bundle_switches, seed=seed)
            for tr in trajs:
                rep = monotonicity_check(B, tr, tol=cfg.get(section, "tol",
                                                            10 * scn.solver.accuracy),
                                         stride=cfg.get(section, "stride", 16))
                if worst is None or rep.worst_margin > worst.worst_margin:
                    worst = rep
        return worst.to_json(), worst.verdict
    if kind == "infinitesimal":
        B = _build_barrier(scn, args.jobs)
        region = cfg.get(section, "region", "everywhere")
        if region == "margin_band":
            region = ("margin_band", cfg.get(section, "width"))
        elif region == "boundary":
            region = ("boundary", cfg.get(section, "width", 1e-3))
        rep = infinitesimal_check(B, scn.system, cfg.get(section, "mode", "smooth"),
                                  region, _parse_relax(cfg.get(section, "g")),
                                  t_grid=scn.t_grid, window=window,
                                  count=cfg.get(section, "count", 200),
                                  seed=seed, tol=cfg.get(section, "tol", 1e-7))
        return rep.to_json(), rep.verdict
    if kind == "nagumo":
        K = _get_set(scn, _require(cfg.get(section, "K"), f"[{section}] needs K"))
        rep = nagumo_check(scn.system, K, cfg.get(section, "mode", "boundary"),
                           n_samples=cfg.get(section, "n_samples", 64),
                           tol=cfg.get(section, "tol", 1e-5), seed=seed,
                           window=window)
        return rep.to_json(), rep.verdict
    if kind == "prop1":
        B = _build_barrier(scn, args.jobs)
        X_o = _get_set(scn, _require(cfg.get(section, "X_o"), f"[{section}] needs X_o"))
        X_s = _get_set(scn, _require(cfg.get(section, "X_s"), f"[{section}] needs X_s"))
        rep = prop1_check(scn.system, X_o, X_s, B, _parse_relax(cfg.get(section, "g")),
                          cfg.get(section, "mode", "conditional"),
                          n_samples=cfg.get(section, "n_samples", 48),
                          shell_width=cfg.get(section, "width", 1e-3),
                          window=window, seed=seed)
        return rep.to_json(), rep.verdict
    if kind == "filippov":
        box = _get_set(scn, _require(cfg.get(section, "lam_box"), f"[{section}] needs lam_box"))
        lam = lipschitz_estimate(scn.system, box, grid=9)
        rng = np.random.default_rng(seed)
        pairs = cfg.get(section, "pairs", 10)
        max_sep = cfg.get(section, "max_sep", 0.5)
        worst = {"max_violation": -np.inf, "holds": True}
        for _ in range(pairs):
            x = rng.uniform(-1.0, 1.0, size=scn.system.dim)
            y = x + rng.uniform(-1.0, 1.0, size=scn.system.dim) * max_sep / np.sqrt(scn.system.dim)
            res = filippov_check(scn.system, x, y, cfg.get(section, "T", 1.0), lam,
                                 scn.solver, tol=cfg.get(section, "tol", 1e-6))
            if res["max_violation"] > worst["max_violation"]:
                worst = res
        payload = json.dumps({"check": "filippov", "lambda": lam, **worst},
                             indent=2, sort_keys=True)
        return payload, ("pass" if worst["holds"] else "fail")
    raise CliError(f"unknown check kind '{kind}'")


def cmd_check(scn: Scenario, args, manifest: Manifest) -> int:
    names = [s.split(" ", 1)[1] for s in scn.raw.section_names("check")]
    if not names:
        raise CliError("no [check NAME] sections in config")
    verdicts = []
    for name in names:
        payload, verdict = _run_one_check(name, scn, args)
        manifest.add(manifest.out / f"{name}.check.json").write_text(payload)
        verdicts.append(verdict)
        print(f"check {name}: {verdict}")
    return 2 if any(v == "fail" for v in verdicts) else 0


def cmd_report(results_dir: str, out: Path) -> int:
    d = Path(results_dir)
    if not d.exists():
        raise CliError(f"results directory not found: {d}")
    entries = []
    for path in sorted(d.glob("*.json")):
        if path.name in ("manifest.json", "summary.json"):
            continue
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        verdict = data.get("verdict")
        if verdict is None:
            continue
        if verdict == "no_violation_found":
            verdict = "pass"
        elif verdict == "violation":
            verdict = "fail"
        entries.append({"file": path.name, "check": data.get("check", path.stem),
                        "verdict": verdict,
                        "worst_margin": data.get("worst_margin")})
    if any(e["verdict"] == "fail" for e in entries):
        rollup = "FAIL"
    elif any(e["verdict"] == "inconclusive" for e in entries):
        rollup = "INCONCLUSIVE"
    else:
        rollup = "PASS"
    failing = [e["check"] for e in entries if e["verdict"] == "fail"]
    inconclusive = [e["check"] for e in entries if e["verdict"] == "inconclusive"]
    summary = {"rollup": rollup, "checks": entries, "failing": failing,
               "inconclusive": inconclusive,
               "disclaimer": "verdicts are one-sided numerical evidence, not proofs"}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    lines = [f"ROLLUP: {rollup}"]
    for e in entries:
        lines.append(f"  {e['verdict'].upper():12s} {e['check']} ({e['file']})")
    if failing:
        lines.append("failing: " + ", ".join(failing))
    if inconclusive:
        lines.append("inconclusive: " + ", ".join(inconclusive))
    lines.append(summary["disclaimer"])
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if rollup == "PASS" else (2 if rollup == "FAIL" else 0)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safereach",
                                description="barrier-function safety toolkit")
    p.add_argument("command", choices=["simulate", "reach", "barrier-eval",
                                       "check", "smooth", "report"])
    p.add_argument("--config", help="scenario file (required except for report)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config entry")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--results", help="results directory for the report command")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "report":
            out = Path(args.out or args.results or ".")
            out.mkdir(parents=True, exist_ok=True)
            return cmd_report(args.results or args.out or ".", out)
        if not args.config:
            raise CliError("--config is required")
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise CliError(f"--set expects SECTION.KEY=VALUE, got '{item}'")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = load_config(args.config, overrides)
        scn = build_scenario(cfg)
        out = _out_dir(args, scn)
        manifest = Manifest(args.command, cfg, out)
        handler = {"simulate": cmd_simulate, "reach": cmd_reach,
                   "barrier-eval": cmd_barrier_eval, "check": cmd_check,
                   "smooth": cmd_smooth}[args.command]
        status = handler(scn, args, manifest)
        manifest.write()
        return status
    except (ConfigError, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

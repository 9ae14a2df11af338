"""Command-line experiment runner.

One config file describes one experiment; the run writes report.json and CSV
data files into the output directory.  Exit status: 0 when every asserted
property holds, 1 when a property fails (it is named), 2 for a bad config.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from typing import Any

import numpy as np

from . import __version__
from .config import ConfigError, dump_config, load_config, parse_approx, parse_dimfun, scene_config
from .dimfun import DomainError, classify_series, derive_g, power_function, theta_transform
from .geometry import Ball

CSV_SCHEMA = 1


class Run:
    def __init__(self, cfg: dict, out_dir: str):
        self.cfg = cfg
        self.out = out_dir
        self.results: dict[str, Any] = {}
        self.checks: list[dict] = []
        self.files: list[str] = []

    def check(self, prop: str, passed: bool, detail: str = "") -> None:
        self.checks.append({"property": prop, "passed": bool(passed), "detail": detail})

    def csv(self, name: str, kind: str, header: list[str], rows) -> None:
        path = os.path.join(self.out, name)
        with open(path, "w", newline="") as fh:
            fh.write(f"# mtplinear {kind} schema v{CSV_SCHEMA}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
        self.files.append(name)


def _pair_for(cfg: dict):
    if cfg["f"] is None:
        return None
    n, m = cfg["scene"]["n"], cfg["scene"]["m"]
    return derive_g(parse_dimfun(cfg["f"]), m * (n - 1), n * m)


def cmd_predict(run: Run) -> None:
    from .estimator import predict_dimension
    sc = run.cfg["scene"]
    psi = parse_approx(sc["psi"], "scene.psi")
    if not hasattr(psi, "tau"):
        raise ConfigError("scene.psi", "predict needs a power law")
    pred = predict_dimension(sc["n"], sc["m"], psi.tau)
    run.results.update(dimension=pred.s0, regime=pred.regime)


def cmd_classify(run: Run) -> None:
    sc = run.cfg["scene"]
    psi = parse_approx(sc["psi"], "scene.psi")
    leb = classify_series(psi, sc["n"], sc["m"])
    run.results["lebesgue"] = leb.verdict.value
    pair = _pair_for(run.cfg)
    if pair is not None:
        haus = classify_series(psi, sc["n"], sc["m"], pair)
        run.results["hausdorff"] = haus.verdict.value
        run.results["hausdorff_note"] = haus.note


def cmd_witnesses(run: Run) -> None:
    from .diophantine import approx_witnesses, witness_heights, write_witnesses_csv
    cfg = scene_config(run.cfg)
    x = run.cfg["estimator"]["x"]
    if x is None or len(x) != cfg.n * cfg.m:
        raise ConfigError("estimator.x", f"need a point with {cfg.n * cfg.m} coordinates")
    ws = approx_witnesses(np.asarray(x, dtype=float), cfg, run.cfg["truncation"]["Q"])
    write_witnesses_csv(os.path.join(run.out, "witnesses.csv"), ws, cfg.n, cfg.m,
                        f"mtplinear witnesses schema v{CSV_SCHEMA}")
    run.files.append("witnesses.csv")
    run.results.update(count=len(ws), heights={str(k): v for k, v in witness_heights(ws).items()})


def cmd_measure(run: Run) -> None:
    from .estimator import mc_measure, tail_bound
    cfg = scene_config(run.cfg)
    tr, est = run.cfg["truncation"], run.cfg["estimator"]
    res = mc_measure(cfg, tr["Q"], tr["G"], est["N"], est["seed"])
    run.results.update(fraction=res.fraction, hits=res.hits, samples=res.samples, half_width=res.half_width)
    if cfg.phi_is_identity:
        run.results["tail_bound"] = tail_bound(cfg, max(tr["G"], 1), tr["Q"])


def cmd_boxdim(run: Run) -> None:
    from .estimator import box_count
    cfg = scene_config(run.cfg)
    est = run.cfg["estimator"]
    if not est["schedule"]:
        raise ConfigError("estimator.schedule", "need a list of [Q, delta] or [Q, delta, G] entries")
    lower = est["lower"]
    series = box_count(cfg, est["schedule"], lower, est["samples"], est["seed"])
    run.results.update(slope=series.slope, intercept=series.intercept, method=series.method)
    run.csv("boxcount.csv", "boxcount", ["Q", "G", "delta", "count", "log_inv_delta", "log_count"],
            [(int(q), int(g), float(d), int(c), float(a), float(b)) for q, g, d, c, a, b in
             zip(series.Q, series.lower, series.delta, series.counts, series.log_inv_delta, series.log_count)])


def cmd_transfer(run: Run) -> None:
    sc = run.cfg["scene"]
    pair = _pair_for(run.cfg)
    if pair is None:
        raise ConfigError("f", "transfer-check needs a dimension function")
    psi = parse_approx(sc["psi"], "scene.psi")
    theta = theta_transform(psi, pair)
    haus = classify_series(psi, sc["n"], sc["m"], pair)
    leb = classify_series(theta, sc["n"], sc["m"])
    run.results.update(hausdorff=haus.verdict.value, lebesgue_of_theta=leb.verdict.value)
    decided = "Inconclusive" not in (haus.verdict.value, leb.verdict.value)
    run.check("transfer agreement", (not decided) or haus.verdict == leb.verdict,
              f"Hausdorff form {haus.verdict.value}, Lebesgue form of theta {leb.verdict.value}")
    qmax = int(run.cfg["estimator"]["q_max"])
    q = np.arange(1, min(qmax, 10000) + 1)
    run.csv("transfer.csv", "transfer", ["q", "psi", "theta"],
            [(int(a), float(b), float(c)) for a, b, c in zip(q, psi.values(q), theta.values(q))])


def _engine_parts(cfg: dict, eta: float):
    from .engine import DyadicScene, EngineConstants, diophantine_scene
    eng = cfg["engine"]
    if cfg["f"] is None:
        raise ConfigError("f", "the engine needs a dimension function")
    f = parse_dimfun(cfg["f"])
    if eng["scene"] == "dyadic":
        try:
            scene = DyadicScene(int(eng["k"]))
        except DomainError as exc:
            raise ConfigError("engine.k", str(exc)) from None
    else:
        from .diophantine import compute_M
        sc = scene_config(cfg)
        pair = derive_g(f, sc.m * (sc.n - 1), sc.n * sc.m)
        scene = diophantine_scene(sc, cfg["truncation"]["Q"], compute_M(sc.psi, pair, sc.n))
    const = EngineConstants.standard(scene.k, scene.l, eta)
    if eng["overrides"]:
        allowed = {"c1", "c2", "c3", "d1", "d2", "epsilon_scale", "sublevel_cap", "kgb_margin"}
        bad = set(eng["overrides"]) - allowed
        if bad:
            raise ConfigError("engine.overrides", f"unknown constants {sorted(bad)}")
        const = const.with_overrides(**eng["overrides"])
    return scene, f, const


def _build(cfg: dict, eta: float):
    from .engine import build_cantor
    scene, f, const = _engine_parts(cfg, eta)
    eng = cfg["engine"]
    return build_cantor(scene, f, eta, eng["depth"], constants=const, max_sublevels=eng["max_sublevels"],
                        max_balls=eng["max_balls"], j_max=cfg["truncation"]["J_max"])


def cmd_mtp_build(run: Run) -> None:
    eta = float(run.cfg["engine"]["eta"])
    tree = _build(run.cfg, eta)
    tree.save(os.path.join(run.out, "tree.json"))
    run.files.append("tree.json")
    for c in tree.checks:
        if not c.passed:
            run.check(c.prop, False, c.detail)
    run.check("construction", True, f"{len(tree.checks)} property checks passed")
    run.results.update(digest=tree.digest(), level_sizes=[lev.size for lev in tree.levels],
                       sublevels=[s.sublevels for s in tree.locals],
                       sublevels_formula=[s.sublevels_formula for s in tree.locals],
                       constants=tree.constants.as_dict())
    rows = []
    for n, lev in enumerate(tree.levels, start=1):
        for i in range(lev.size):
            rows.append([n, i, int(lev.sublevel[i]), int(lev.parent[i]), float(lev.radii[i]),
                         float(lev.weight[i])] + [float(v) for v in lev.centers[i]])
    k = tree.k
    run.csv("nodes.csv", "nodes", ["level", "id", "sublevel", "parent", "radius", "weight"]
            + [f"x{i + 1}" for i in range(k)], rows)


def _stable(values: list[float], tol: float = 0.2) -> bool:
    vals = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vals)):
        return False
    mean = float(vals.mean())
    if mean == 0:
        return True
    return bool(np.all(np.abs(vals - mean) <= tol * mean))


def cmd_mtp_verify(run: Run) -> None:
    from .engine import CantorTree, verify_cantor_measure_bound
    from .estimator import uniform_interval_measure, verify_mdp_bound
    eng = run.cfg["engine"]
    eta = float(eng["eta"])
    trees = {}
    if eng["tree"]:
        trees[eta] = CantorTree.load(eng["tree"])
    else:
        trees[eta] = _build(run.cfg, eta)
        trees[2 * eta] = _build(run.cfg, 2 * eta)
    rows = []
    summary = {}
    for e, tree in trees.items():
        maxima = []
        for seed in eng["seeds"]:
            rep = verify_cantor_measure_bound(tree, eng["samples"], seed)
            maxima.append(rep.constant)
            for i, r in enumerate(rep.ball_ratios):
                rows.append([e, seed, "ball", i, -1, float(r)])
        levels = np.concatenate([np.full(lev.size, n) for n, lev in enumerate(tree.levels[1:], start=2)]) \
            if tree.depth > 1 else np.zeros(0)
        for i, r in enumerate(rep.node_ratios):
            rows.append([e, -1, "node", i, int(levels[i]), float(r)])
        summary[repr(e)] = maxima
        run.check("measure bound finite", bool(np.all(np.isfinite(maxima))), f"eta={e}: maxima {maxima}")
        run.check("measure bound stable across seeds", _stable(maxima), f"eta={e}: maxima {maxima}")
    if len(trees) > 1:
        firsts = [v[0] for v in summary.values()]
        run.check("measure bound stable across eta", _stable(firsts), f"maxima {firsts}")
    rng = np.random.default_rng(eng["seeds"][0])
    balls = [Ball([c], r) for c, r in zip(rng.random(1000), 10 ** rng.uniform(-4, -1, 1000))]
    mdp = verify_mdp_bound(uniform_interval_measure, power_function(1.0), 2.0, 0.1, balls)
    run.check("mass distribution bound", mdp.passed, f"uniform measure: max ratio {mdp.max_ratio:.6g}")
    run.results.update(maxima=summary, uniform_max_ratio=mdp.max_ratio)
    run.csv("measure_ratios.csv", "measure-ratios", ["eta", "seed", "kind", "id", "level", "ratio"], rows)


DISPATCH = {
    "predict": cmd_predict,
    "classify": cmd_classify,
    "witnesses": cmd_witnesses,
    "measure": cmd_measure,
    "boxdim": cmd_boxdim,
    "transfer-check": cmd_transfer,
    "mtp-build": cmd_mtp_build,
    "mtp-verify": cmd_mtp_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtplinear", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(DISPATCH))
    p.add_argument("--config", help="JSON experiment config (command may be omitted inside)")
    p.add_argument("--seed", type=int, help="overrides estimator.seed")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, help="worker threads for compiled kernels")
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override one config entry, e.g. scene.n=2")
    return p


def _apply_set(data: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(key, "expected KEY=VALUE")
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = val


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data: dict = {}
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError("--config", str(exc)) from None
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}:{exc.lineno}:{exc.colno}", exc.msg) from None
        if data.get("command", args.command) != args.command:
            raise ConfigError("command", f"config is for {data['command']!r}, not {args.command!r}")
        data["command"] = args.command
        for item in args.set:
            _apply_set(data, item)
        if args.seed is not None:
            data.setdefault("estimator", {})["seed"] = args.seed
        if args.out is not None:
            data.setdefault("output", {})["dir"] = args.out
        cfg = load_config(data)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads", "must be positive")
            import numba
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    out = cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    run = Run(cfg, out)
    start = time.perf_counter()
    status = 0
    from .engine import ConstructionError
    try:
        DISPATCH[args.command](run)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    except ConstructionError as exc:
        run.check(exc.prop, False, str(exc))
    except DomainError as exc:
        print(f"config error at {args.command}: {exc}", file=sys.stderr)
        return 2
    failed = [c for c in run.checks if not c["passed"]]
    if failed:
        status = 1
    report = {
        "tool": "mtplinear",
        "version": __version__,
        "command": args.command,
        "config": cfg,
        "wall_time": time.perf_counter() - start,
        "results": run.results,
        "checks": run.checks,
        "files": run.files,
        "status": "pass" if not failed else "fail",
    }
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    print(json.dumps({"command": args.command, "status": report["status"], "results": run.results},
                     sort_keys=True, default=_jsonable))
    for c in failed:
        print(f"FAILED {c['property']}: {c['detail']}", file=sys.stderr)
    return status


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return str(obj)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

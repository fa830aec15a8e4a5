"""Command-line harness: ``gen``, ``train``, ``eval``, ``counterexample``, ``verify``.

Run configs are TOML files with ``[env]``, ``[run]``, ``[schedule]``,
``[online]`` and ``[eval]`` tables; see ``presets/`` for complete examples.
Command-line flags override the file, and ``ROBUST_CRL_SEED`` overrides the
file's ``run.base_seed`` (an explicit ``--seed`` flag still wins).
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from ._validation import ValidationError
from .counterexample import run_counterexample
from .envs import EnvSpec, make_env, robust_threshold
from .mdp import TabularCMDP, load_mdp, save_mdp
from .online import BASELINE_KINDS, OnlineConfig, evaluate_trace, pool_tables, run_method
from .robust import ContaminationSet
from .rpd import CSV_COLUMNS, RunRecord, check_feasibility, rpd_run, setup_schedule
from .svg import line_chart
from .verify import run_suite

SEED_ENV = "ROBUST_CRL_SEED"
TRACE_COLUMNS = ("method", "seed") + CSV_COLUMNS
EVAL_COLUMNS = ("iterate", "method", "metric", "mean", "p5", "p95", "exact")
EXIT_CONFIG = 2
EXIT_MISMATCH = 3

DEFAULTS = {
    "env": {"file": None, "kind": None, "seed": 0, "gamma": 0.95, "threshold": "default",
            "threshold_frac": 0.5, "sn": 20, "an": 10, "size": 4, "n": 40, "slip": 0.1},
    "run": {"mode": None, "methods": None, "delta": None, "sigma": -10.0, "T": None,
            "replicas": 1, "base_seed": 0, "replicate": "run"},
    "schedule": {"kind": None, "nu": 0.1, "tau": 3.0, "xi": None, "alpha": 1.0, "beta": 2.0,
                 "b_scale": 0.01, "lambda_max": None, "slater_policies": 64},
    "online": {"eps_est": 0.1, "kappa": 1.0, "inner_cap": 200_000, "td_step": "per_pair"},
    "eval": {"n_reps": 30, "sample_size": 200, "every": 1},
}
REQUIRED = (("run", "mode"), ("run", "delta"), ("run", "T"))


class ConfigError(Exception):
    pass


def load_config_file(path):
    """Read a TOML config, or the ``config`` echo of a ``manifest.json``."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if "config" not in doc:
            raise ConfigError(f"{path} has no 'config' entry")
        return doc["config"]
    with path.open("rb") as fh:
        return tomllib.load(fh)


def load_preset(name):
    text = resources.files("robust_crl").joinpath("presets", f"{name}.toml").read_text()
    return tomllib.loads(text)


def list_presets():
    folder = resources.files("robust_crl").joinpath("presets")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".toml"))


def resolve_config(raw, overrides=None):
    """Fill defaults, apply overrides and check required fields.

    ``overrides`` maps ``"section.key"`` to a value; ``None`` values are ignored.
    Raises :class:`ConfigError` naming the first missing or unknown field.
    """
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in (raw or {}).items():
        if section not in cfg:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"config section [{section}] must be a table")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown config field {section}.{key}")
            cfg[section][key] = value
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".")
        cfg[section][key] = value
    for section, key in REQUIRED:
        if cfg[section][key] is None:
            raise ConfigError(f"missing config field: {section}.{key}")
    if cfg["env"]["file"] is None and cfg["env"]["kind"] is None:
        raise ConfigError("missing config field: env.kind")
    run = cfg["run"]
    if run["mode"] not in ("exact", "online"):
        raise ConfigError(f"run.mode must be 'exact' or 'online', got {run['mode']!r}")
    if run["methods"] is None:
        run["methods"] = ["robust_rpd"] if run["mode"] == "exact" else list(BASELINE_KINDS)
    bad = [m for m in run["methods"] if m not in BASELINE_KINDS]
    if bad or (run["mode"] == "exact" and run["methods"] != ["robust_rpd"]):
        raise ConfigError(f"run.methods not supported in {run['mode']} mode: {run['methods']}")
    if run["replicate"] not in ("run", "env"):
        raise ConfigError("run.replicate must be 'run' or 'env'")
    if cfg["schedule"]["kind"] is None:
        cfg["schedule"]["kind"] = "theoretical" if run["mode"] == "exact" else "practical"
    return cfg


def build_env(env_cfg, delta, seed_offset=0):
    if env_cfg["file"]:
        return load_mdp(env_cfg["file"])
    threshold = env_cfg["threshold"]
    spec = EnvSpec(kind=env_cfg["kind"], seed=int(env_cfg["seed"]) + seed_offset,
                   gamma=float(env_cfg["gamma"]),
                   threshold=float(threshold) if isinstance(threshold, (int, float)) else None,
                   sn=int(env_cfg["sn"]), an=int(env_cfg["an"]), size=int(env_cfg["size"]),
                   n=int(env_cfg["n"]), slip=float(env_cfg["slip"]))
    mdp = make_env(spec)
    if threshold == "robust":
        b = robust_threshold(mdp, delta, env_cfg["threshold_frac"])
        rule = f"robust calibration with frac={env_cfg['threshold_frac']} at delta={delta}"
        mdp = TabularCMDP(mdp.kernel, mdp.reward, mdp.utilities, mdp.gamma, mdp.rho, (b,),
                          meta=dict(mdp.meta, threshold_rule=rule))
    elif not isinstance(threshold, (int, float)) and threshold != "default":
        raise ConfigError(f"env.threshold must be a number, 'default' or 'robust', got {threshold!r}")
    return mdp


def _replica_env(cfg, i, shared_env):
    if cfg["run"]["replicate"] == "env":
        return build_env(cfg["env"], cfg["run"]["delta"], seed_offset=i)
    return shared_env


def _td_step(value):
    # TOML has no null, so the documented default rule is spelled "default"
    if value == "default":
        return None
    return tuple(value) if isinstance(value, list) else value


def _run_task(task):
    """One (method, replica) training run; executed in a worker process."""
    cfg, method, i, mdp = task["cfg"], task["method"], task["replica"], task["mdp"]
    run, sch = cfg["run"], cfg["schedule"]
    seed = int(run["base_seed"]) + i
    cset = ContaminationSet.around(mdp, run["delta"])
    slater_seed = int(cfg["env"]["seed"]) + (i if run["replicate"] == "env" else 0)
    schedule, info = setup_schedule(
        mdp, cset, run["sigma"], kind=sch["kind"], nu=sch["nu"], tau=sch["tau"], xi=sch["xi"],
        alpha=sch["alpha"], beta=sch["beta"], b_scale=sch["b_scale"],
        slater_policies=sch["slater_policies"], seed=slater_seed, lambda_max=sch["lambda_max"],
    )
    out = {"method": method, "seed": seed, "replica": i, "env_hash": mdp.digest(),
           "schedule": schedule.to_dict(), "info": info}
    if run["mode"] == "exact":
        best, records = rpd_run(mdp, cset, run["sigma"], schedule, int(run["T"]))
        eps = min(r.grad_norm for r in records[1:])
        report = check_feasibility(best, schedule, mdp, cset, run["sigma"], eps)
        out["feasibility"] = dict(report.to_dict(), best_t=best.t, best_grad_norm=eps)
    else:
        onl = cfg["online"]
        config = OnlineConfig(T=int(run["T"]), eps_est=float(onl["eps_est"]), schedule=schedule,
                              sigma=run["sigma"], kappa=float(onl["kappa"]), seed=seed,
                              inner_cap=int(onl["inner_cap"]), td_step=_td_step(onl["td_step"]))
        records = run_method(method, mdp, cset, config).records
    out["rows"] = [r.row() for r in records]
    out["thetas"] = np.stack([r.theta for r in records])
    return out


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def format_trace_csv(results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for res in results:
        for row in res["rows"]:
            writer.writerow([res["method"], res["seed"], row[0]] + [repr(float(x)) for x in row[1:]])
    return buf.getvalue()


def train(cfg, out_dir, jobs=1):
    """Run every (method, replica) pair and write trace, policies, env and manifest."""
    start = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = cfg["run"]
    shared = build_env(cfg["env"], run["delta"]) if run["replicate"] == "run" else None
    tasks = []
    for method in run["methods"]:
        for i in range(int(run["replicas"])):
            tasks.append({"cfg": cfg, "method": method, "replica": i, "mdp": _replica_env(cfg, i, shared)})
    first_env = tasks[0]["mdp"]
    if first_env.threshold > 1.0 / (1.0 - first_env.gamma):
        print(f"warning: threshold b={first_env.threshold} exceeds 1/(1-gamma); no policy is feasible",
              file=sys.stderr)
    results = _map(_run_task, tasks, jobs)
    # merge in (method, seed) order regardless of completion order
    order = {m: k for k, m in enumerate(run["methods"])}
    results.sort(key=lambda r: (order[r["method"]], r["seed"]))

    (out_dir / "trace.csv").write_text(format_trace_csv(results))
    np.savez_compressed(out_dir / "policies.npz",
                        **{f"{r['method']}__{r['seed']}": r["thetas"] for r in results})
    save_mdp(first_env, out_dir / "env.json")
    env_hashes = sorted({r["env_hash"] for r in results})
    manifest = {
        "config": cfg,
        "env_hash": first_env.digest(),
        "env_hashes": env_hashes,
        "env_meta": first_env.meta,
        "threshold": first_env.threshold,
        "schedule": results[0]["schedule"],
        "constants": results[0]["info"]["constants"],
        "softmax_k": results[0]["info"]["softmax_k"],
        "softmax_l": results[0]["info"]["softmax_l"],
        "zeta": results[0]["info"]["zeta"],
        "zeta_prime": results[0]["info"]["zeta_prime"],
        "lambda_star": results[0]["info"]["lambda_star"],
        "seeds": sorted({r["seed"] for r in results}),
        "runs": [{"method": r["method"], "seed": r["seed"], "env_hash": r["env_hash"],
                  "zeta": r["info"]["zeta"], "lambda_star": r["info"]["lambda_star"],
                  **({"feasibility": r["feasibility"]} if "feasibility" in r else {})}
                 for r in results],
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_clock_s": round(time.time() - start, 3),
    }
    if run["mode"] == "online":
        manifest["inner_cap"] = cfg["online"]["inner_cap"]
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    return results, manifest


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def read_trace(run_dir):
    """Rebuild per-(method, seed) record lists from trace.csv and policies.npz."""
    run_dir = Path(run_dir)
    with (run_dir / "trace.csv").open() as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRACE_COLUMNS:
            raise ValidationError(f"unexpected trace header {header}")
        rows = list(reader)
    policies = np.load(run_dir / "policies.npz")
    traces = {}
    for row in rows:
        method, seed = row[0], int(row[1])
        key = (method, seed)
        thetas = policies[f"{method}__{seed}"]
        recs = traces.setdefault(key, [])
        vals = [float(x) for x in row[3:]]
        recs.append(RunRecord(int(row[2]), *vals, theta=thetas[len(recs)]))
    return traces


def _eval_task(task):
    mdp, delta, sigma, ev = task["mdp"], task["delta"], task["sigma"], task["eval"]
    return evaluate_trace(task["records"], mdp, ContaminationSet.around(mdp, delta), sigma,
                          n_reps=int(ev["n_reps"]), sample_size=int(ev["sample_size"]),
                          seed=task["seed"], method=task["method"], every=int(ev["every"]))


def evaluate_run(run_dir, env_path=None, out_dir=None, jobs=1, eval_overrides=None):
    """Evaluate a finished ``train`` directory; writes eval.csv, eval_summary.json, vr.svg, vc.svg."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = manifest["config"]
    if cfg["run"]["replicate"] != "run":
        raise ConfigError("eval needs a run with a single shared environment (run.replicate = 'run')")
    mdp = load_mdp(env_path or run_dir / "env.json")
    if mdp.digest() != manifest["env_hash"]:
        raise HashMismatch(f"environment hash {mdp.digest()} does not match manifest {manifest['env_hash']}")
    ev = dict(cfg["eval"], **{k: v for k, v in (eval_overrides or {}).items() if v is not None})
    traces = read_trace(run_dir)
    methods = cfg["run"]["methods"]
    tasks = [{"mdp": mdp, "delta": cfg["run"]["delta"], "sigma": cfg["run"]["sigma"], "eval": ev,
              "records": recs, "method": method, "seed": [int(cfg["run"]["base_seed"]), k, seed]}
             for k, method in enumerate(methods)
             for (m, seed), recs in sorted(traces.items()) if m == method]
    tables = _map(_eval_task, tasks, jobs)
    pooled = {}
    for method in methods:
        pooled[method] = pool_tables([tb for tb, task in zip(tables, tasks) if task["method"] == method])

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVAL_COLUMNS)
    for method in methods:
        for row in pooled[method].rows:
            writer.writerow(list(row[:3]) + [repr(x) for x in row[3:]])
    (out_dir / "eval.csv").write_text(buf.getvalue())

    summary = {"threshold": mdp.threshold, "delta": cfg["run"]["delta"], "eval": ev, "methods": {}}
    for method in methods:
        tb = pooled[method]
        summary["methods"][method] = {
            "final_exact_Vr": tb.final_exact("Vr").tolist(),
            "final_exact_Vc": tb.final_exact("Vc").tolist(),
            "mean_final_exact_Vr": float(tb.final_exact("Vr").mean()),
            "mean_final_exact_Vc": float(tb.final_exact("Vc").mean()),
            "mean_final_td_Vr": float(tb.estimates["Vr"][:, -1, :].mean()),
            "mean_final_td_Vc": float(tb.estimates["Vc"][:, -1, :].mean()),
        }
    (out_dir / "eval_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))

    for metric, fname, title in (("Vr", "vr.svg", "robust reward value"),
                                 ("Vc", "vc.svg", "robust utility value")):
        series = []
        for method in methods:
            rows = [r for r in pooled[method].rows if r[2] == metric]
            series.append({"label": method, "x": [r[0] for r in rows], "mean": [r[3] for r in rows],
                           "lo": [r[4] for r in rows], "hi": [r[5] for r in rows]})
        svg = line_chart(series, title=f"{title}, delta={cfg['run']['delta']}", ylabel=metric,
                         hline=mdp.threshold if metric == "Vc" else None)
        (out_dir / fname).write_text(svg)
    return pooled, summary


class HashMismatch(Exception):
    pass


def _threshold_arg(text):
    if text in ("default", "robust"):
        return text
    return float(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="robust-crl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a benchmark CMDP as JSON")
    p.add_argument("--kind", required=True, choices=["garnet", "frozen_lake", "taxi", "n_chain"])
    p.add_argument("--sn", type=int, default=20)
    p.add_argument("--an", type=int, default=10)
    p.add_argument("--size", type=int, default=4)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--slip", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--threshold", type=_threshold_arg, default="default")
    p.add_argument("--threshold-frac", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.2, help="used by --threshold robust")
    p.add_argument("--out", required=True, help="output file (.json) or directory")

    p = sub.add_parser("train", help="run a training config")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="TOML config or a manifest.json to replay")
    src.add_argument("--preset", help="packaged preset name")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, default=None, help="run.base_seed")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--schedule", choices=["theoretical", "practical"], default=None)
    p.add_argument("--methods", nargs="+", default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--inner-cap", type=int, default=None)
    p.add_argument("--env", default=None, help="environment JSON, replaces the [env] generator")

    p = sub.add_parser("eval", help="evaluate a training directory")
    p.add_argument("--run", required=True, help="directory written by train")
    p.add_argument("--env", default=None, help="environment JSON (default: RUN/env.json)")
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--n-reps", type=int, default=None)
    p.add_argument("--sample-size", type=int, default=None)
    p.add_argument("--every", type=int, default=None)

    p = sub.add_parser("counterexample", help="three-state non-convexity witness")
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--mix", type=float, default=1.0 / 3.0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("verify", help="run the invariant suite against an environment")
    p.add_argument("--env", required=True)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--sigma", type=float, default=-10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    sub.add_parser("presets", help="list packaged presets")
    return parser


def _seed_override(flag):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return None


def cmd_gen(args):
    seed = _seed_override(args.seed)
    env_cfg = dict(DEFAULTS["env"], kind=args.kind, seed=0 if seed is None else seed, gamma=args.gamma,
                   threshold=args.threshold, threshold_frac=args.threshold_frac, sn=args.sn, an=args.an,
                   size=args.size, n=args.n, slip=args.slip)
    mdp = build_env(env_cfg, args.delta)
    out = Path(args.out)
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "env.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    save_mdp(mdp, out)
    print(f"wrote {out} (S={mdp.n_states}, A={mdp.n_actions}, b={mdp.threshold:.6g}, sha256={mdp.digest()[:12]})")
    return 0


def cmd_train(args):
    raw = load_preset(args.preset) if args.preset else load_config_file(args.config)
    overrides = {
        "run.base_seed": _seed_override(args.seed), "run.T": args.T, "run.replicas": args.replicas,
        "run.delta": args.delta, "run.sigma": args.sigma, "schedule.kind": args.schedule,
        "run.methods": args.methods, "online.kappa": args.kappa, "online.inner_cap": args.inner_cap,
        "env.file": args.env,
    }
    cfg = resolve_config(raw, overrides)
    results, manifest = train(cfg, args.out, jobs=max(1, args.jobs))
    print(f"wrote {len(results)} runs to {args.out} in {manifest['wall_clock_s']:.1f}s")
    for run in manifest["runs"]:
        feas = run.get("feasibility")
        if feas and not feas["feasible"]:
            print(f"warning: {run['method']} seed {run['seed']} violates the constraint by more than 2*eps "
                  f"(slack {feas['slack']:.4g})", file=sys.stderr)
    return 0


def cmd_eval(args):
    overrides = {"n_reps": args.n_reps, "sample_size": args.sample_size, "every": args.every}
    pooled, summary = evaluate_run(args.run, args.env, args.out, jobs=max(1, args.jobs),
                                   eval_overrides=overrides)
    b = summary["threshold"]
    for method, s in summary["methods"].items():
        print(f"{method:14s} final robust Vr={s['mean_final_exact_Vr']:.4f} "
              f"Vc={s['mean_final_exact_Vc']:.4f} (b={b:.4f})")
    return 0


def cmd_counterexample(args):
    report = run_counterexample(args.gamma, args.delta, args.mix)
    doc = report.to_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "counterexample.json").write_text(json.dumps(doc, indent=2))
    print(f"V(1)={report.v_pi_prime_linear[0]:.10g} V(2)={report.v_pi_prime_linear[1]:.10g} "
          f"verdict={report.verdict}")
    print(f"closed forms match: nominal={report.closed_form_match_nominal} "
          f"(err {report.closed_form_max_err_nominal:.2e}), robust={report.closed_form_match_robust} "
          f"(err {report.closed_form_max_err_robust:.2e})")
    return 0


def cmd_verify(args):
    mdp = load_mdp(args.env, validate=False)
    results = run_suite(mdp, delta=args.delta, sigma=args.sigma, seed=args.seed)
    failed = False
    for r in results:
        tag = "SKIP" if r.skipped else ("PASS" if r.passed else "FAIL")
        failed |= not r.passed and not r.skipped
        print(f"{tag} {r.name} {r.detail}".rstrip())
        if not r.passed and r.counterexample:
            print("     counterexample: " + json.dumps(r.counterexample))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(json.dumps([r.to_dict() for r in results], indent=2))
    return 1 if failed or any(r.skipped and not r.passed for r in results) else 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
                "counterexample": cmd_counterexample, "verify": cmd_verify}
    try:
        if args.command == "presets":
            print("\n".join(list_presets()))
            return 0
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HashMismatch as exc:
        print(f"refusing to evaluate: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

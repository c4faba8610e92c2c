"""Command-line experiment runner.

Every subcommand reads an optional JSON config (``--config``), lets ``--seed``
override the global seed, writes its reports under ``--out`` and finishes
with ``manifest.json`` recording the seed, package versions and input
digests. A violated certificate makes the process exit with status 1 after
writing the offending certificate to ``violations.json``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bisim import bisim_metric, bisim_partition
from .bounds import certify_instance, construct_deep_policy
from .certificate import CSV_HEADER, Certificate
from .envs import (
    DonutWorldConfig,
    RingWorldEnv,
    donutworld_dataset,
    lipschitz_bisim_policy,
    lipschitz_instance,
    load_dataset,
    ringworld,
    ringworld_dataset,
    save_dataset,
)
from .latent import global_losses, lift_policy, load_model, local_losses
from .mdp_core import (
    InvalidInputError,
    Policy,
    load_mdp,
    policy_evaluation,
    save_mdp,
    stationary_distribution,
    value_iteration,
)
from .prob_metrics import DiscreteDistribution, MetricKind, MetricSpace, distance
from .train import (
    Batch,
    TrainConfig,
    certify_snapped_gap,
    gradcheck_detail,
    save_checkpoint,
    snap_model,
    train_deepmdp,
)

DEFAULTS = {
    "solve": {"mdp": None, "policy": None, "tol": 1e-10},
    "metric": {"p": None, "q": None, "space": None, "kinds": ["wasserstein", "total_variation", "energy"]},
    "bisim": {"mdp": None, "tol": 1e-9},
    "losses": {"mdp": None, "model": None, "policy": None, "kinds": ["wasserstein", "total_variation"]},
    "certify": {
        "n_instances": 50,
        "kinds": ["wasserstein", "total_variation", "energy"],
        "perturbations": [0.0, 0.02, 0.05, 0.1, 0.2],
        "n_states": 6,
        "n_latent": 4,
        "n_actions": 2,
        "gamma": 0.9,
        "certificates": ["global", "local", "rep_global", "rep_local", "subopt", "lipschitz", "bisim", "construction"],
    },
    "train": {
        "n_phases": 12,
        "n_tracks": 4,
        "warp": 0.5,
        "resolution": 8,
        "n_samples": 5000,
        "dataset": None,
        "gradcheck_batch": 16,
        "rollouts": 200,
        "horizon": 100,
        "config": {"learning_rate": 1e-3, "steps": 8000, "batch_size": 128, "optimizer": "adam",
                   "penalty_weight": 0.001},
    },
    "gen-env": {"n_phases": 12, "n_tracks": 4, "warp": 0.5, "gamma": 0.9, "resolution": 8,
                "n_samples": 1000, "donut_samples": 0, "donut_tracks": 1},
}


class ConfigError(InvalidInputError):
    pass


def load_config(command: str, path: str | None, seed: int | None) -> tuple[dict, int]:
    """Merge a JSON config over the defaults of ``command``; unknown keys are rejected."""
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    global_seed = 0
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        unknown = set(doc) - {"seed", command}
        if unknown:
            raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
        global_seed = int(doc.get("seed", 0))
        block = doc.get(command, {})
        bad = set(block) - set(cfg)
        if bad:
            raise ConfigError(f"{path}: unknown keys for {command!r}: {sorted(bad)}")
        for k, v in block.items():
            if isinstance(cfg[k], dict) and isinstance(v, dict):
                cfg[k].update(v)
            else:
                cfg[k] = v
    return cfg, global_seed if seed is None else int(seed)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_manifest(out: Path, command: str, seed: int, cfg: dict, inputs: dict, outputs: list[str]) -> None:
    import numba

    doc = {
        "command": command,
        "seed": seed,
        "config": cfg,
        "versions": {"deepmdp_lab": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "numba": numba.__version__},
        "inputs": {k: _file_digest(v) for k, v in inputs.items() if v},
        "outputs": sorted(outputs),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=1))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _need(cfg: dict, key: str):
    if not cfg.get(key):
        raise ConfigError(f"missing required input {key!r}")
    return cfg[key]


def _load_policy(path, n_states: int, n_actions: int) -> Policy:
    if not path:
        return Policy.uniform(n_states, n_actions)
    return Policy(np.asarray(json.loads(Path(path).read_text()), dtype=float))


# ------------------------------------------------------------------ commands


def run_solve(cfg: dict, seed: int, out: Path) -> tuple[int, list[str]]:
    mdp = load_mdp(_need(cfg, "mdp"))
    if cfg["policy"]:
        values = policy_evaluation(mdp, _load_policy(cfg["policy"], mdp.n_states, mdp.n_actions), cfg["tol"])
        greedy = None
    else:
        values, policy = value_iteration(mdp, cfg["tol"])
        greedy = policy.probs.argmax(1)
    header = ["state", "v"] + [f"q{a}" for a in range(mdp.n_actions)] + ([] if greedy is None else ["greedy"])
    rows = []
    for s in range(mdp.n_states):
        row = [s, repr(float(values.v[s]))] + [repr(float(x)) for x in values.q[s]]
        rows.append(row + ([] if greedy is None else [int(greedy[s])]))
    _write_csv(out / "values.csv", header, rows)
    return 0, ["values.csv"]


def _load_space(path) -> MetricSpace:
    doc = json.loads(Path(path).read_text())
    if "coords" in doc:
        return MetricSpace.euclidean(np.asarray(doc["coords"], float))
    if "dist" in doc:
        return MetricSpace(np.asarray(doc["dist"], float))
    raise ConfigError(f"{path}: a space needs 'coords' or 'dist'")


def _load_dist(path) -> DiscreteDistribution:
    doc = json.loads(Path(path).read_text())
    try:
        return DiscreteDistribution(doc["support"], doc["weights"])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc.args[0]!r}") from exc


def run_metric(cfg: dict, seed: int, out: Path) -> tuple[int, list[str]]:
    p, q = _load_dist(_need(cfg, "p")), _load_dist(_need(cfg, "q"))
    space = _load_space(_need(cfg, "space"))
    rows = []
    for kind in cfg["kinds"]:
        k = MetricKind.parse(kind)
        rows.append([k.value, repr(distance(k, p, q, space))])
    _write_csv(out / "metric.csv", ["kind", "value"], rows)
    return 0, ["metric.csv"]


def run_bisim(cfg: dict, seed: int, out: Path) -> tuple[int, list[str]]:
    mdp = load_mdp(_need(cfg, "mdp"))
    res = bisim_metric(mdp, cfg["tol"])
    part = bisim_partition(mdp)
    n = mdp.n_states
    _write_csv(out / "bisim_metric.csv", ["s1", "s2", "d"],
               [[i, j, repr(float(res.metric.d[i, j]))] for i in range(n) for j in range(n)])
    _write_csv(out / "partition.csv", ["state", "block"], [[s, int(b)] for s, b in enumerate(part.block_of)])
    kernel = res.metric.kernel(1e-7)
    summary = {"n_states": n, "n_blocks": part.n_blocks, "kernel_matches_partition": kernel == part,
               "iterations": res.iterations, "residual": res.residual}
    (out / "bisim_summary.json").write_text(json.dumps(summary, indent=1))
    return 0, ["bisim_metric.csv", "partition.csv", "bisim_summary.json"]


def run_losses(cfg: dict, seed: int, out: Path) -> tuple[int, list[str]]:
    mdp = load_mdp(_need(cfg, "mdp"))
    model = load_model(_need(cfg, "model"))
    deep = _load_policy(cfg["policy"], model.n_latent, model.n_actions)
    xi = stationary_distribution(mdp, lift_policy(model, deep))
    reports = []
    for kind in cfg["kinds"]:
        reports.append(global_losses(mdp, model, kind).to_dict())
        reports.append(local_losses(mdp, model, kind, xi).to_dict())
    (out / "losses.json").write_text(json.dumps(reports, indent=1))
    _write_csv(out / "losses.csv", ["kind", "mode", "reward_loss", "transition_loss"],
               [[r["metric_kind"], r["mode"], repr(r["reward_loss"]), repr(r["transition_loss"])] for r in reports])
    return 0, ["losses.json", "losses.csv"]


def battery_instance(job: tuple) -> list[Certificate]:
    """All requested certificates on one generated instance; ``job = (seed, kind, config)``."""
    seed, kind, cfg = job
    kind = MetricKind.parse(kind)
    perturbation = cfg["perturbations"][seed % len(cfg["perturbations"])]
    latent_dim = 1 if kind is MetricKind.ENERGY else 2
    inst = lipschitz_instance(seed, cfg["n_states"], cfg["n_latent"], cfg["n_actions"], cfg["gamma"],
                              perturbation, latent_dim)
    which = tuple(c for c in cfg["certificates"] if c != "construction")
    certs = certify_instance(inst.mdp, inst.model, inst.policy, kind, which)
    if "construction" in cfg["certificates"] and kind is MetricKind.WASSERSTEIN:
        rng = np.random.default_rng(seed + 7919)
        res = bisim_metric(inst.mdp, 1e-12)
        slope = float(rng.uniform(0.1, 3.0))
        pol, K = lipschitz_bisim_policy(rng, res.metric.d, inst.mdp.n_actions, slope)
        certs.append(construct_deep_policy(inst.mdp, inst.model, pol, K, res).certificate)
    for c in certs:
        c.notes.append(f"instance seed={seed} perturbation={perturbation}")
    return certs


def run_certify(cfg: dict, seed: int, out: Path, workers: int = 1) -> tuple[int, list[str]]:
    jobs = [(seed + i, kind, cfg) for i in range(cfg["n_instances"]) for kind in cfg["kinds"]]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(battery_instance, jobs))
    else:
        results = [battery_instance(j) for j in jobs]
    certs = [c for batch in results for c in batch]
    rows = []
    for (inst_seed, kind, _), batch in zip(jobs, results):
        for c in batch:
            for part in c.flatten():
                rows.append([inst_seed] + part.csv_row())
    _write_csv(out / "certificates.csv", ["instance"] + CSV_HEADER, rows)
    (out / "certificates.json").write_text(json.dumps([c.to_dict() for c in certs], indent=1))
    bad = [c for c in certs if not c.satisfied]
    outputs = ["certificates.csv", "certificates.json"]
    if bad:
        (out / "violations.json").write_text(json.dumps([c.to_dict() for c in bad], indent=1))
        print(f"{len(bad)} certificate(s) violated; first: {bad[0]}", file=sys.stderr)
        return 1, outputs + ["violations.json"]
    return 0, outputs


def run_train(cfg: dict, seed: int, out: Path) -> tuple[int, list[str]]:
    tcfg = TrainConfig.from_dict({**cfg["config"], "seed": seed})
    world = ringworld(cfg["n_phases"], cfg["n_tracks"], tcfg.gamma, cfg["warp"])
    env = RingWorldEnv(world, cfg["resolution"])
    data = load_dataset(cfg["dataset"], 3) if cfg["dataset"] else \
        ringworld_dataset(world, cfg["n_samples"], seed, cfg["resolution"])
    model, trace = train_deepmdp(data, tcfg)
    save_checkpoint(model, out / "model.json")
    trace.write_csv(out / "trace.csv")
    batch = Batch.take(data, np.arange(min(cfg["gradcheck_batch"], len(data))))
    gc_rows = []
    for step, vec in zip(trace.snapshot_steps, trace.snapshots):
        rep = gradcheck_detail(model.with_flat(vec), batch, tcfg.penalty_weight)
        gc_rows.append([step, repr(rep.max_rel_error), repr(rep.max_abs_error), rep.one_sided])
    _write_csv(out / "gradcheck.csv", ["step", "max_rel_error", "max_abs_error", "one_sided"], gc_rows)
    snapped = snap_model(model, env.observations)
    cert = certify_snapped_gap(env, world.mdp, snapped, model, cfg["rollouts"], cfg["horizon"], seed)
    (out / "snapped_certificate.json").write_text(cert.to_json())
    summary = {
        "reward_loss_at_10pct": trace.window_mean("reward_loss", 0.1),
        "reward_loss_final": trace.window_mean("reward_loss", 1.0),
        "transition_loss_final": trace.window_mean("transition_loss", 1.0),
        "max_gradcheck_rel_error": max(float(r[1]) for r in gc_rows) if gc_rows else None,
        "value_gap": cert.lhs,
        "certified_bound": cert.rhs,
        "train_config": asdict(tcfg),
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=1))
    outputs = ["model.json", "trace.csv", "gradcheck.csv", "snapped_certificate.json", "train_summary.json"]
    if not cert.satisfied:
        (out / "violations.json").write_text(json.dumps([cert.to_dict()], indent=1))
        print(f"certificate violated: {cert}", file=sys.stderr)
        return 1, outputs + ["violations.json"]
    return 0, outputs


def run_gen_env(cfg: dict, seed: int, out: Path) -> tuple[int, list[str]]:
    world = ringworld(cfg["n_phases"], cfg["n_tracks"], cfg["gamma"], cfg["warp"])
    save_mdp(world.mdp, out / "ringworld_mdp.json")
    outputs = ["ringworld_mdp.json"]
    if cfg["n_samples"]:
        save_dataset(ringworld_dataset(world, cfg["n_samples"], seed, cfg["resolution"]), out / "ringworld_data.csv")
        outputs.append("ringworld_data.csv")
    if cfg["donut_samples"]:
        dcfg = DonutWorldConfig(n_tracks=cfg["donut_tracks"], seed=seed)
        save_dataset(donutworld_dataset(dcfg, cfg["donut_samples"], seed), out / "donutworld_data.csv")
        outputs.append("donutworld_data.csv")
    return 0, outputs


COMMANDS = {
    "solve": run_solve,
    "metric": run_metric,
    "bisim": run_bisim,
    "losses": run_losses,
    "certify": run_certify,
    "train": run_train,
    "gen-env": run_gen_env,
}

INPUT_KEYS = ("mdp", "policy", "p", "q", "space", "model", "dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepmdp-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="global seed (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        p.add_argument("--out", default="out", help="output directory")
        for key in INPUT_KEYS:
            if key in DEFAULTS[name]:
                p.add_argument(f"--{key}", help=f"{key} file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, seed = load_config(args.command, args.config, args.seed)
        for key in INPUT_KEYS:
            if getattr(args, key, None):
                cfg[key] = getattr(args, key)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        runner = COMMANDS[args.command]
        if args.command == "certify":
            status, outputs = runner(cfg, seed, out, args.workers)
        else:
            status, outputs = runner(cfg, seed, out)
    except (InvalidInputError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    inputs = {k: cfg.get(k) for k in INPUT_KEYS if isinstance(cfg.get(k), str)}
    if args.config:
        inputs["config"] = args.config
    write_manifest(out, args.command, seed, cfg, inputs, outputs)
    return status


if __name__ == "__main__":
    sys.exit(main())

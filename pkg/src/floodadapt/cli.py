"""Command-line entry points: generate | train | eval | inspect.

Every command is deterministic under (config, seed) and records a manifest
entry in the output directory listing input and output checksums, so any
table or figure can be re-derived from the manifest alone.

Exit codes: 0 success, 1 validation failure (bad flags, unknown ids,
malformed files), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys

import numpy as np

from floodadapt import __version__
from floodadapt.config import Config, ConfigError, KINDS, load_config
from floodadapt import forcing
from floodadapt.env import AdaptationEnv, CityBundle
from floodadapt.kernels import BACKEND
from floodadapt.network import (
    CitySpec,
    DataError,
    generate_synthetic_city,
    read_demand,
    read_network,
    read_trips,
    read_zone_attrs,
    write_demand,
    write_network,
    write_trips,
    write_zone_attrs,
)
from floodadapt.flood import read_terrain, write_terrain
from floodadapt.policy import PolicyActor
from floodadapt.trainer import (
    BASELINES,
    TrainingError,
    evaluate,
    summarize,
    train,
)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x: float) -> str:
    """Shortest round-trip decimal form; byte-stable across runs."""
    return repr(float(x))


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def append_manifest(out_dir: str, command: str, args: dict,
                    inputs: list, outputs: list) -> str:
    """Record a run in out_dir/manifest.json; entries are never removed."""
    path = os.path.join(out_dir, "manifest.json")
    entries = []
    if os.path.exists(path):
        with open(path) as fh:
            entries = json.load(fh)
    entries.append({
        "command": command,
        "args": {k: v for k, v in sorted(args.items())},
        "code_version": __version__,
        "kernel_backend": BACKEND,
        "inputs": {p: _sha256(p) for p in inputs if os.path.exists(p)},
        "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in outputs},
    })
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=1, sort_keys=False)
        fh.write("\n")
    return path


def _scenario_ids(scenario_dir: str | None) -> list:
    ids = list(forcing.SCENARIOS)
    if scenario_dir and os.path.isdir(scenario_dir):
        for name in sorted(os.listdir(scenario_dir)):
            if name.endswith(".scenario"):
                sid = name[:-len(".scenario")]
                if sid not in ids:
                    ids.append(sid)
    return ids


def _check_scenario(sid: str, scenario_dir: str | None, role: str) -> None:
    valid = _scenario_ids(scenario_dir)
    if sid not in valid:
        raise UsageError(
            f"unknown {role} scenario {sid!r}; valid ids: {', '.join(valid)}")


def _load_cfg(path: str | None) -> Config:
    cfg = load_config(path) if path else Config()
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# generate

def cmd_generate(ns) -> int:
    try:
        rows, cols = (int(p) for p in ns.grid.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects ROWSxCOLS, got {ns.grid!r}")
    spec = CitySpec(zones=ns.zones, grid=(rows, cols), trips=ns.trips,
                    cell_size_m=ns.cell_size, seed=ns.seed)
    grid, net, demand, attrs = generate_synthetic_city(spec)
    bundle = CityBundle(grid, net, demand, attrs)
    os.makedirs(ns.out, exist_ok=True)
    bundle.save(ns.out)
    outputs = [os.path.join(ns.out, f) for f in CityBundle.FILES]
    append_manifest(ns.out, "generate",
                    {"zones": ns.zones, "grid": ns.grid, "trips": ns.trips,
                     "cell_size": ns.cell_size, "seed": ns.seed},
                    [], outputs)
    n_trips = sum(r.count for r in demand)
    print(f"wrote city bundle ({ns.zones} zones, {len(net.node_xy)} nodes, "
          f"{n_trips} trips over {len(demand)} OD pairs) to {ns.out}")
    return 0


# ---------------------------------------------------------------------------
# train

def cmd_train(ns) -> int:
    cfg = _load_cfg(ns.config)
    if ns.scenario_dir:
        cfg.scenario_dir = ns.scenario_dir
    _check_scenario(ns.scenario, cfg.scenario_dir, "belief")
    bundle = CityBundle.load(ns.city)
    result = train(bundle, cfg, ns.scenario, seed=ns.seed, out_dir=ns.out,
                   max_env_steps=ns.max_env_steps, resume=ns.resume)
    inputs = [os.path.join(ns.city, f) for f in CityBundle.FILES]
    if ns.config:
        inputs.append(ns.config)
    outputs = [result.checkpoint_path,
               os.path.join(ns.out, "train_log.csv"),
               os.path.join(ns.out, "train_state.json")]
    append_manifest(ns.out, "train",
                    {"city": ns.city, "scenario": ns.scenario, "seed": ns.seed,
                     "max_env_steps": result.env_steps, "resume": ns.resume},
                    inputs, outputs)
    print(f"trained {result.updates} updates / {result.env_steps} env steps"
          f"{' (plateau stop)' if result.stopped_early else ''}; "
          f"checkpoint at {result.checkpoint_path}")
    return 0


# ---------------------------------------------------------------------------
# eval

def _write_trace(path: str, results, horizon_start: int) -> None:
    with open(path, "w") as fh:
        fh.write("episode\tstep\tyear\tzone\taction\tinfrastructure_dkk\t"
                 "delay_dkk\tcancellation_dkk\taction_dkk\tmaintenance_dkk\n")
        for ep, res in enumerate(results):
            for (t, actions, bd, _reward) in res.trace:
                for z in range(len(actions)):
                    fh.write("\t".join([
                        str(ep), str(t), str(horizon_start + t), str(z),
                        KINDS[actions[z]],
                        _fmt(bd.infrastructure[z]), _fmt(bd.delay[z]),
                        _fmt(bd.cancellation[z]), _fmt(bd.action[z]),
                        _fmt(bd.maintenance[z]),
                    ]) + "\n")


def _write_pathway(path: str, results, horizon_start: int) -> None:
    n_zones = results[0].pathway.shape[1]
    with open(path, "w") as fh:
        fh.write("episode\tstep\tyear\t"
                 + "\t".join(f"zone_{z}" for z in range(n_zones)) + "\n")
        for ep, res in enumerate(results):
            for t in range(res.pathway.shape[0]):
                fh.write(f"{ep}\t{t}\t{horizon_start + t}\t"
                         + "\t".join(KINDS[a] for a in res.pathway[t]) + "\n")


def _write_report(path: str, results, label: str) -> None:
    cols = ("infrastructure", "delay", "cancellation", "action", "maintenance")
    with open(path, "w") as fh:
        fh.write("policy\tepisode\tseed\ttotal_dkk\t"
                 + "\t".join(f"{c}_dkk" for c in cols) + "\n")
        for ep, res in enumerate(results):
            fh.write("\t".join([label, str(ep), str(res.seed),
                                _fmt(res.total_reward_dkk)]
                               + [_fmt(v) for v in res.components_dkk]) + "\n")
        s = summarize(results)
        fh.write("\t".join([label, "mean", "-", _fmt(s["mean_total_dkk"])]
                           + [_fmt(v) for v in s["mean_components_dkk"]]) + "\n")
        fh.write("\t".join([label, "std", "-", _fmt(s["std_total_dkk"])]
                           + [_fmt(v) for v in s["std_components_dkk"]]) + "\n")


def _component_series(results, horizon_start: int):
    """Per-year city-wide component sums, averaged over episodes."""
    n_steps = max(r.steps for r in results)
    series = np.zeros((n_steps, 5))
    for res in results:
        for (t, _actions, bd, _reward) in res.trace:
            series[t] += [bd.infrastructure.sum(), bd.delay.sum(),
                          bd.cancellation.sum(), bd.action.sum(),
                          bd.maintenance.sum()]
    series /= len(results)
    years = np.arange(horizon_start, horizon_start + n_steps)
    return years, series


def _write_series(path: str, years, series) -> None:
    cols = ("infrastructure", "delay", "cancellation", "action", "maintenance")
    with open(path, "w") as fh:
        fh.write("year\t" + "\t".join(f"{c}_dkk" for c in cols) + "\n")
        for i, year in enumerate(years):
            fh.write(str(int(year)) + "\t"
                     + "\t".join(_fmt(v) for v in series[i]) + "\n")


def _plot_series(path: str, years, series, title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "floodadapt"
    import matplotlib.pyplot as plt

    labels = ("infrastructure", "delay", "cancellation", "action", "maintenance")
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for k, lab in enumerate(labels):
        ax.plot(years, series[:, k] / 1e6, label=lab)
    ax.set_xlabel("year")
    ax.set_ylabel("annual cost [million DKK]")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def _resolve_policy(ns, cfg):
    if ns.baseline and ns.checkpoint:
        raise UsageError("--baseline and --checkpoint are mutually exclusive")
    if ns.baseline:
        if ns.baseline not in BASELINES:
            raise UsageError(f"unknown baseline {ns.baseline!r}; valid: "
                             + ", ".join(sorted(BASELINES)))
        return BASELINES[ns.baseline](), ns.baseline, False
    if ns.checkpoint:
        actor = PolicyActor.load(ns.checkpoint, cfg)
        return actor, "trained", not ns.stochastic
    raise UsageError("eval needs --checkpoint PATH or --baseline NAME "
                     "(unless --matrix is given)")


def cmd_eval(ns) -> int:
    cfg = _load_cfg(ns.config)
    if ns.scenario_dir:
        cfg.scenario_dir = ns.scenario_dir
    bundle = CityBundle.load(ns.city)
    os.makedirs(ns.out, exist_ok=True)
    if ns.matrix:
        return _eval_matrix(ns, cfg, bundle)

    _check_scenario(ns.reality, cfg.scenario_dir, "reality")
    belief = ns.belief or ns.reality
    if ns.belief:
        _check_scenario(ns.belief, cfg.scenario_dir, "belief")
    policy, label, deterministic = _resolve_policy(ns, cfg)
    env = AdaptationEnv(bundle, cfg, ns.reality)
    results = evaluate(policy, env, ns.seeds, ns.seed,
                       deterministic=deterministic, keep_traces=True)

    start = cfg.env.horizon_start
    paths = {name: os.path.join(ns.out, name) for name in
             ("trace.tsv", "pathway.tsv", "eval_report.tsv",
              "components.tsv", "components.svg")}
    _write_trace(paths["trace.tsv"], results, start)
    _write_pathway(paths["pathway.tsv"], results, start)
    _write_report(paths["eval_report.tsv"], results, label)
    years, series = _component_series(results, start)
    _write_series(paths["components.tsv"], years, series)
    _plot_series(paths["components.svg"], years, series,
                 f"{label}  belief={belief}  reality={ns.reality}")

    inputs = [os.path.join(ns.city, f) for f in CityBundle.FILES]
    for p in (ns.config, ns.checkpoint):
        if p:
            inputs.append(p)
    append_manifest(ns.out, "eval",
                    {"city": ns.city, "belief": belief, "reality": ns.reality,
                     "seed": ns.seed, "seeds": ns.seeds, "policy": label,
                     "checkpoint": ns.checkpoint, "baseline": ns.baseline},
                    inputs, sorted(paths.values()))
    s = summarize(results)
    print(f"{label} on reality {ns.reality}: mean total "
          f"{s['mean_total_dkk']:.6g} DKK (std {s['std_total_dkk']:.4g}) "
          f"over {ns.seeds} episodes; outputs in {ns.out}")
    return 0


def _eval_matrix(ns, cfg, bundle) -> int:
    """Belief x reality grid: checkpoint per belief, envs per reality."""
    scenarios = _scenario_ids(cfg.scenario_dir)
    rows_path = os.path.join(ns.out, "matrix_rows.tsv")
    cells_path = os.path.join(ns.out, "matrix.tsv")
    table_path = os.path.join(ns.out, "matrix.txt")
    cells = {}
    with open(rows_path, "w") as rows_fh:
        rows_fh.write("belief\treality\tepisode\tseed\ttotal_dkk\t"
                      "infrastructure_dkk\tdelay_dkk\tcancellation_dkk\t"
                      "action_dkk\tmaintenance_dkk\n")
        for belief in scenarios:
            ckpt = os.path.join(ns.matrix, f"{belief}.npz")
            if not os.path.exists(ckpt):
                for reality in scenarios:
                    cells[(belief, reality)] = None
                continue
            actor = PolicyActor.load(ckpt, cfg)
            for reality in scenarios:
                env = AdaptationEnv(bundle, cfg, reality)
                results = evaluate(actor, env, ns.seeds, ns.seed,
                                   deterministic=not ns.stochastic)
                cells[(belief, reality)] = summarize(results)
                for ep, res in enumerate(results):
                    rows_fh.write("\t".join(
                        [belief, reality, str(ep), str(res.seed),
                         _fmt(res.total_reward_dkk)]
                        + [_fmt(v) for v in res.components_dkk]) + "\n")

    with open(cells_path, "w") as fh:
        fh.write("belief\treality\tn_seeds\tmean_total_dkk\tstd_total_dkk\n")
        for (belief, reality), s in cells.items():
            if s is None:
                fh.write(f"{belief}\t{reality}\t0\tabsent\tabsent\n")
            else:
                fh.write(f"{belief}\t{reality}\t{s['n']}\t"
                         f"{_fmt(s['mean_total_dkk'])}\t"
                         f"{_fmt(s['std_total_dkk'])}\n")

    with open(table_path, "w") as fh:
        fh.write("Mean +- std of total reward over "
                 f"{ns.seeds} seeds, in 1e9 DKK.\n")
        fh.write("Rows: belief (training) scenario; "
                 "columns: reality (evaluation) scenario.\n\n")
        width = 22
        fh.write("belief \\ reality".ljust(width)
                 + "".join(r.ljust(width) for r in scenarios) + "\n")
        for belief in scenarios:
            row = [belief.ljust(width)]
            for reality in scenarios:
                s = cells[(belief, reality)]
                cell = ("absent" if s is None else
                        f"{s['mean_total_dkk'] / 1e9:.2f} +- "
                        f"{s['std_total_dkk'] / 1e9:.2f}")
                row.append(cell.ljust(width))
            fh.write("".join(row).rstrip() + "\n")

    inputs = [os.path.join(ns.city, f) for f in CityBundle.FILES]
    for belief in scenarios:
        ckpt = os.path.join(ns.matrix, f"{belief}.npz")
        if os.path.exists(ckpt):
            inputs.append(ckpt)
    append_manifest(ns.out, "eval",
                    {"city": ns.city, "matrix": ns.matrix, "seed": ns.seed,
                     "seeds": ns.seeds},
                    inputs, [rows_path, cells_path, table_path])
    print(f"wrote belief x reality matrix over {ns.seeds} seeds to {ns.out}")
    return 0


# ---------------------------------------------------------------------------
# inspect

def _sniff(path: str) -> str:
    with open(path) as fh:
        head = fh.read(4096)
    first = head.lstrip().splitlines()[0] if head.strip() else ""
    if first.startswith("ncols"):
        return "terrain"
    if first.startswith("[nodes]") or "[nodes]" in head:
        return "network"
    if first.startswith("origin_node"):
        return "trips"
    if first.startswith("origin_zone"):
        return "demand"
    if first.startswith("zone\t"):
        return "zones"
    raise UsageError(f"cannot identify file format of {path}")


_READERS = {"terrain": read_terrain, "network": read_network,
            "trips": read_trips, "demand": read_demand,
            "zones": read_zone_attrs}
_WRITERS = {"terrain": write_terrain, "network": write_network,
            "trips": write_trips, "demand": write_demand,
            "zones": write_zone_attrs}


def _summarize_bundle(path: str) -> str:
    bundle = CityBundle.load(path)
    lines = [f"city bundle at {path}",
             f"  zones: {bundle.n_zones}",
             f"  terrain: {bundle.grid.elevation.shape[0]}x"
             f"{bundle.grid.elevation.shape[1]} cells, "
             f"cell {bundle.grid.cell_size_m:g} m",
             f"  nodes: {len(bundle.net.node_xy)}, "
             f"edges: {len(bundle.net.edge_from)}",
             f"  trips: {sum(r.count for r in bundle.demand)} "
             f"over {len(bundle.demand)} OD pairs"]
    for f in CityBundle.FILES:
        lines.append(f"  {f}  sha256 {_sha256(os.path.join(path, f))[:16]}")
    return "\n".join(lines)


def cmd_inspect(ns) -> int:
    if os.path.isdir(ns.path):
        print(_summarize_bundle(ns.path))
        return 0
    kind = _sniff(ns.path)
    data = _READERS[kind](ns.path)
    if ns.out:
        _WRITERS[kind](ns.out, data)
        print(f"{kind} file ok; canonical copy written to {ns.out}")
    else:
        buf = io.StringIO()
        n = (len(data) if isinstance(data, (list, dict))
             else len(data.edge_from) if kind == "network"
             else data.elevation.size)
        buf.write(f"{kind} file ok ({n} records)\n")
        print(buf.getvalue(), end="")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="floodadapt",
                description="Flood-adaptation investment planning: synthetic "
                            "city generation, policy training, evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic city bundle")
    g.add_argument("--out", required=True)
    g.add_argument("--zones", type=int, default=4)
    g.add_argument("--grid", default="16x16", help="terrain ROWSxCOLS")
    g.add_argument("--trips", type=int, default=500)
    g.add_argument("--cell-size", type=float, default=50.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a policy on a city bundle")
    t.add_argument("--city", required=True, help="city bundle directory")
    t.add_argument("--scenario", required=True,
                   help="belief scenario id to train under")
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None, help="YAML config overrides")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--max-env-steps", type=int, default=None)
    t.add_argument("--scenario-dir", default=None)
    t.add_argument("--resume", action="store_true",
                   help="continue from checkpoint + state in --out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    e.add_argument("--city", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--baseline", default=None,
                   help="NoControl or RandomControl")
    e.add_argument("--belief", default=None,
                   help="scenario the checkpoint was trained under (label)")
    e.add_argument("--reality", default="RCP4.5",
                   help="scenario the evaluation environment samples from")
    e.add_argument("--config", default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--seeds", type=int, default=10,
                   help="number of evaluation episodes")
    e.add_argument("--stochastic", action="store_true",
                   help="sample actions instead of taking the argmax")
    e.add_argument("--matrix", default=None, metavar="CKPT_DIR",
                   help="directory of per-belief checkpoints "
                        "(<scenario>.npz); writes the belief x reality grid")
    e.add_argument("--scenario-dir", default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect",
                       help="validate and summarize a bundle or data file")
    i.add_argument("path")
    i.add_argument("--out", default=None,
                   help="write the canonical re-serialization here")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        return ns.func(ns)
    except (UsageError, ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

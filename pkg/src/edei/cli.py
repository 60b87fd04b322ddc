"""Command-line entry point: ``python -m edei {gen,train,eval,sweep,plot}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from . import env as E
from . import marl
from . import metrics as M
from . import scenarios as S
from .predictor import Predictor
from .scenarios import STANDARD_CELLS, ScenarioError, generate, standard_cells

log = logging.getLogger("edei")

SCENARIOS = tuple(STANDARD_CELLS)
TRAINABLE = ("maddpg", "pmaddpg")
EVAL_POLICIES = ("greedy", "random", "maddpg", "pmaddpg")


class CliError(RuntimeError):
    pass


def _scenario(args) -> "ScenarioConfig":  # noqa: F821
    return generate(args.scenario, seed=args.seed, agents=args.agents, incidents=args.incidents,
                    reduced=args.reduced)


def _positive(name: str, value: int) -> None:
    if value <= 0:
        raise CliError(f"{name} must be positive")


def cell_name(scenario: str, agents: int, incidents: int, reduced: bool = False) -> str:
    return f"{scenario}_{agents}a_{incidents}i" + ("_reduced" if reduced else "")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenario is None:
        cells = standard_cells()
    else:
        cfg = _scenario(args)
        cells = [(args.scenario, cfg.agents, len(cfg.initial_incidents))]
    for name, agents, incidents in cells:
        cfg = generate(name, seed=args.seed, agents=agents, incidents=incidents, reduced=args.reduced)
        path = out / f"{cell_name(name, agents, incidents, args.reduced)}.json"
        S.save(cfg, path)
        print(path)
    return 0


def _save_run(out: Path, result: marl.TrainOutput) -> Path:
    stores = {}
    for k, nets in enumerate(result.nets):
        for role, store in nets.stores().items():
            stores[f"agent{k}/{role}"] = store
    if result.predictor is not None:
        stores["predictor"] = result.predictor.params
    return ckpt.save(ckpt.merge(stores), out / "checkpoint.edei")


def load_policy(path: str | Path, n_agents: int):
    """Rebuild the decentralised actors (and predictor, when stored) from a checkpoint."""
    groups = ckpt.split(ckpt.load(path))
    actors = []
    for k in range(n_agents):
        key = f"agent{k}/actor"
        if key not in groups:
            raise CliError(f"{path}: checkpoint has no actor for agent {k}")
        actors.append(groups[key])
    predictor = Predictor.from_params(groups["predictor"]) if "predictor" in groups else None

    def act(state, agent):
        return marl.select_action(actors[agent], E.observe(state, agent), E.action_mask(state, agent), 0.0, None)

    return act, predictor


def _train(args, cfg, out: Path) -> marl.TrainOutput:
    tc = marl.TrainConfig(episodes=args.episodes, seed=args.seed, use_predictor=args.policy == "pmaddpg")
    if args.warmup is not None:
        tc.warmup = args.warmup
    tc.validate()
    result = marl.train(cfg, tc, policy_name=args.policy)
    M.write_csv(result.rows, out / "train.csv")
    _save_run(out, result)
    ckpt.write_manifest(out / "manifest.json", argv=args.argv, command="train", scenario=S.to_dict(cfg),
                        train_config=asdict(tc), seeds={"scenario": args.seed, "train": tc.seed})
    return result


def cmd_train(args) -> int:
    _positive("episodes", args.episodes)
    if args.policy not in TRAINABLE:
        raise CliError(f"train supports {TRAINABLE}, not {args.policy!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _scenario(args)
    result = _train(args, cfg, out)
    last = result.rows[-min(len(result.rows), 20):]
    print(f"{args.policy} {cfg.name}: {len(result.rows)} episodes, {result.updates} updates, "
          f"last-20 reward {np.mean([r['reward'] for r in last]):.4f}")
    return 0


def _evaluate(args, cfg, out: Path, csv_name: str = "eval.csv") -> list[M.EpisodeRecord]:
    if args.policy in ("greedy", "random"):
        records = marl.run_episodes(cfg, args.policy, args.episodes, args.seed)
    else:
        if args.checkpoint is None:
            raise CliError(f"eval --policy {args.policy} needs --checkpoint")
        act, predictor = load_policy(args.checkpoint, cfg.agents)
        if args.policy == "maddpg":
            predictor = None
        elif predictor is None:
            raise CliError(f"{args.checkpoint}: no predictor stored; was it trained as pmaddpg?")
        records = marl.run_episodes(cfg, act, args.episodes, args.seed, predictor, args.policy)
    M.write_csv([M.row(r) for r in records], out / csv_name)
    ckpt.write_manifest(out / (Path(csv_name).stem + ".manifest.json"), argv=args.argv, command="eval",
                        scenario=S.to_dict(cfg), policy=args.policy, seeds={"scenario": args.seed, "eval": args.seed},
                        checkpoint=args.checkpoint)
    return records


def cmd_eval(args) -> int:
    _positive("episodes", args.episodes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _scenario(args)
    records = _evaluate(args, cfg, out)
    agg = M.aggregate(records)[(cfg.name, args.policy)]
    print(" ".join(f"{k}={agg[k]:.4f}" for k in M.METRIC_KEYS))
    return 0


def cmd_sweep(args) -> int:
    """Every standard cell for one policy; learned policies are trained first."""
    _positive("episodes", args.episodes)
    out = Path(args.out)
    summary = []
    for name, agents, incidents in standard_cells():
        cell = out / cell_name(name, agents, incidents, args.reduced)
        cell.mkdir(parents=True, exist_ok=True)
        cfg = generate(name, seed=args.seed, agents=agents, incidents=incidents, reduced=args.reduced)
        sub = argparse.Namespace(**vars(args))
        sub.scenario, sub.agents, sub.incidents = name, agents, incidents
        if args.policy in TRAINABLE:
            _train(sub, cfg, cell)
            sub.checkpoint = str(cell / "checkpoint.edei")
            sub.episodes = args.eval_episodes
        records = _evaluate(sub, cfg, cell)
        agg = M.aggregate(records)[(cfg.name, args.policy)]
        summary.append({"cell": cell.name, **{k: agg[k] for k in M.METRIC_KEYS}})
        print(cell.name, " ".join(f"{k}={agg[k]:.4f}" for k in M.METRIC_KEYS))
    with (out / "summary.csv").open("w", encoding="utf-8") as fh:
        fh.write(",".join(("cell",) + M.METRIC_KEYS) + "\n")
        for row in summary:
            fh.write(",".join([row["cell"]] + [repr(float(row[k])) for k in M.METRIC_KEYS]) + "\n")
    return 0


# panels per scenario: storage (rate_s, rate_f, r), factory (TP, rate_f, r), airport (TE, IT, r)
PANELS = {
    "storage": ("rate_s", "rate_f", "reward"),
    "factory": ("tp", "rate_f", "reward"),
    "airport": ("te", "it", "reward"),
}
LABELS = {"rate_s": "task completion rate", "rate_f": "incident damage rate", "reward": "reward",
          "tp": "throughput", "te": "transport efficiency", "it": "inventory carry rate"}


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if len(y) < window or window <= 1:
        return y
    return np.convolve(y, np.ones(window) / window, mode="valid")


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.csv:
        raise CliError("plot needs at least one CSV file")
    rows = [r for path in args.csv for r in M.read_csv(path)]
    by_scenario: dict[str, dict[str, list[dict]]] = {}
    for r in rows:
        base = r["scenario"].split("-")[0]
        by_scenario.setdefault(base, {}).setdefault(r["policy"], []).append(r)
    for scen, policies in sorted(by_scenario.items()):
        panels = PANELS.get(scen, ("rate_s", "rate_f", "reward"))
        fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3))
        for ax, key, tag in zip(axes, panels, "abcd"):
            for pol, prs in sorted(policies.items()):
                prs = sorted(prs, key=lambda r: (r["seed"], r["episode"]))
                y = _smooth(np.array([r[key] for r in prs]), args.window)
                ax.plot(np.arange(len(y)), y, label=pol, linewidth=1)
            ax.set_title(f"({tag}) {LABELS[key]}")
            ax.set_xlabel("episode")
        axes[0].legend(fontsize="small")
        fig.tight_layout()
        path = out / f"{scen}_curves.svg"
        fig.savefig(path)
        plt.close(fig)
        print(path)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edei", description="Incident-aware multi-agent assignment experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", choices=SCENARIOS, required=scenario_required, default=None)
        sp.add_argument("--agents", type=int, default=None)
        sp.add_argument("--incidents", type=int, default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--reduced", action="store_true", help="shrink to <=12 nodes, 2 agents, t_max 100")
        sp.add_argument("--out", default="runs")

    sp = sub.add_parser("gen", help="write scenario files (all nine standard cells by default)")
    common(sp, scenario_required=False)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train maddpg or pmaddpg")
    common(sp)
    sp.add_argument("--policy", choices=TRAINABLE, default="pmaddpg")
    sp.add_argument("--episodes", type=int, default=2000)
    sp.add_argument("--warmup", type=int, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a baseline or a checkpointed policy")
    common(sp)
    sp.add_argument("--policy", choices=EVAL_POLICIES, default="greedy")
    sp.add_argument("--episodes", type=int, default=20)
    sp.add_argument("--checkpoint", default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="run one policy over all nine standard cells")
    common(sp, scenario_required=False)
    sp.add_argument("--policy", choices=EVAL_POLICIES[:2] + TRAINABLE, default="greedy")
    sp.add_argument("--episodes", type=int, default=20)
    sp.add_argument("--eval-episodes", type=int, default=20)
    sp.add_argument("--warmup", type=int, default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("plot", help="render metric curves from CSV files to SVG")
    sp.add_argument("csv", nargs="*")
    sp.add_argument("--out", default="plots")
    sp.add_argument("--window", type=int, default=20)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on bad input
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, ScenarioError, ckpt.CheckpointError, M.MetricError, ValueError, OSError) as exc:
        print(f"edei: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

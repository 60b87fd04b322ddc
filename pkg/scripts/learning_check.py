"""Train P-MADDPG on the reduced storage cell for several seeds and compare with baselines.

    python scripts/learning_check.py --seeds 0 1 2 --episodes 2000 --out runs/learning_check

Per-seed training CSVs and a summary.csv are written under --out.
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from edei import marl
from edei import metrics as M
from edei.scenarios import generate


def one_seed(seed: int, episodes: int, eval_episodes: int, out: Path) -> dict:
    cfg = generate("storage", reduced=True)
    t0 = time.time()
    result = marl.train(cfg, marl.TrainConfig(episodes=episodes, seed=seed))
    M.write_csv(result.rows, out / f"train_seed{seed}.csv")
    eval_seed = 10_000 + seed
    runs = {
        "pmaddpg": marl.run_episodes(cfg, marl.learned_policy(result.nets), eval_episodes, eval_seed,
                                     result.predictor, "pmaddpg"),
        "greedy": marl.run_episodes(cfg, "greedy", eval_episodes, eval_seed),
        "random": marl.run_episodes(cfg, "random", eval_episodes, eval_seed),
    }
    row = {"seed": seed, "minutes": (time.time() - t0) / 60}
    for name, recs in runs.items():
        row[f"{name}_reward"] = float(np.mean([r.reward for r in recs]))
        row[f"{name}_rate_s"] = float(np.mean([M.rate_s(r)[0] for r in recs]))
    row["passed"] = (row["pmaddpg_reward"] > row["random_reward"]
                     and row["pmaddpg_rate_s"] >= row["greedy_rate_s"] - 0.05)
    return row


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--eval-episodes", type=int, default=20)
    ap.add_argument("--out", default="runs/learning_check")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seeds:
        rows.append(one_seed(seed, args.episodes, args.eval_episodes, out))
        print(", ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in rows[-1].items()),
              flush=True)
    with (out / "summary.csv").open("w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
    print(f"{sum(r['passed'] for r in rows)}/{len(rows)} seeds pass")


if __name__ == "__main__":
    main()

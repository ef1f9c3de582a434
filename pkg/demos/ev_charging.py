"""EV charging at city scale: 1200 cars sharing 400 level-1 and 500 level-2 points.

Walks through the headline experiment end to end:

  1. run the coupled feedback loops for 2000 four-hour periods,
  2. watch total allocations converge onto both capacities,
  3. verify near-consensus of the cars' marginal costs (the optimality
     signature), and
  4. compare the final averages against the social optimum from the
     independent dual solver.

Writes three PNGs next to the chosen output directory.

Usage: python demos/ev_charging.py [--steps N] [--seed S] [--out DIR] [--no-plot]
"""

import argparse
from pathlib import Path

import numpy as np

from unitalloc import capacity_metrics, consensus_spread, run, solve_social_optimum
from unitalloc.cli import build_preset
from unitalloc.cost_model import grad_matrix, stack_population


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--no-plot", action="store_true")
    args = ap.parse_args()

    from dataclasses import replace
    cfg = replace(build_preset("ev-charging"), steps=args.steps, seed=args.seed)
    caps = np.array([s.capacity for s in cfg.resources])

    print(f"== running {cfg.n} cars for {cfg.steps} steps "
          f"(capacities {caps.tolist()}, seed {cfg.seed}) ==")
    trace = run(cfg)
    print(f"   done in {trace.wall_clock:.2f}s; "
          f"clamp events per charger type: {trace.clamps.sum(axis=0).tolist()}")

    print("\n== capacity tracking ==")
    for j, name in enumerate(["level 1", "level 2"]):
        m = capacity_metrics(trace, j, window=60)
        print(f"   {name}: final sum_y = {trace.sum_y[-1, j]:8.2f}  "
              f"(target {caps[j]:.0f});  mean |sum_xi - C| over last 60 steps "
              f"= {m.xi_mean_abs_dev:.2f}")

    print("\n== marginal-cost consensus (true derivatives, with CO2 baseline) ==")
    tables = stack_population(trace.population)
    T = trace.steps
    for j, name in enumerate(["level 1", "level 2"]):
        gmin, gmax, spread = consensus_spread(trace, T, j, include_linear=True)
        mean = grad_matrix(tables, trace.snapshots[T], True)[:, j].mean()
        print(f"   {name}: derivatives in [{gmin:.3f}, {gmax:.3f}], "
              f"spread/mean = {spread / mean:.3f}")

    print("\n== against the social optimum ==")
    sol = solve_social_optimum(trace.population, caps,
                               include_linear=cfg.include_linear)
    err = np.abs(trace.final_y - sol.y_star)
    print(f"   consensus level per charger type (mu): {np.round(sol.mu, 4).tolist()}")
    print(f"   allocation error vs optimum: max {err.max():.4f}, "
          f"mean {err.mean():.4f}")
    print(f"   social cost at optimum {sol.objective:.2f} kg CO2-equivalent per period")

    if args.no_plot:
        return
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    k = np.arange(trace.steps + 1)

    fig, ax = plt.subplots(figsize=(7, 4))
    for j, name in enumerate(["level 1", "level 2"]):
        ax.plot(k, trace.sum_y[:, j], label=f"sum of averages, {name}")
        ax.axhline(caps[j], ls="--", lw=1, color="gray")
    ax.set_xlabel("time step")
    ax.set_ylabel("total average allocation")
    ax.legend()
    fig.tight_layout()
    fig.savefig(outdir / "ev_sum_average_allocation.png", dpi=120)

    fig, ax = plt.subplots(figsize=(7, 4))
    last = slice(trace.steps - 59, trace.steps + 1)
    for j, name in enumerate(["level 1", "level 2"]):
        ax.plot(k[last], trace.sum_xi[last, j], marker="o", ms=3,
                lw=1, label=f"utilization, {name}")
        ax.axhline(caps[j], ls="--", lw=1, color="gray")
    ax.set_xlabel("time step")
    ax.set_ylabel("charging points in use")
    ax.set_title("last 60 steps")
    ax.legend()
    fig.tight_layout()
    fig.savefig(outdir / "ev_utilization_last60.png", dpi=120)

    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    snap_steps = sorted(trace.snapshots)
    for j, ax in enumerate(axes):
        profile = np.array([
            grad_matrix(tables, trace.snapshots[s], True)[:, j]
            for s in snap_steps
        ])
        sub = np.linspace(0, cfg.n - 1, 60).astype(int)
        ax.plot(snap_steps, profile[:, sub], lw=0.5, alpha=0.5)
        ax.set_xlabel("time step")
        ax.set_title(f"derivative profile, level {j + 1}")
    axes[0].set_ylabel("marginal cost")
    fig.tight_layout()
    fig.savefig(outdir / "ev_derivative_profiles.png", dpi=120)
    print(f"\nplots saved under {outdir}/")


if __name__ == "__main__":
    main()

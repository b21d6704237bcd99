"""Run presets over several seeds and print the final metrics per seed.

    python3 scripts/sweep.py mixture-ada mixture-l2 --seeds 10 --desk-scale --out runs/sweep

Seeds run in parallel processes when GWGFLOW_THREADS > 1; outputs are the
same either way.  Each run is written to OUT/<preset>-seed<k>.
"""
import argparse
from pathlib import Path

from gwgflow.config import preset
from gwgflow.runner import run_many, write_outputs


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("presets", nargs="+")
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--desk-scale", action="store_true")
    parser.add_argument("--out", type=Path, default=Path("runs/sweep"))
    args = parser.parse_args(argv)

    configs = [preset(name, desk_scale=args.desk_scale, seed=s)
               for name in args.presets for s in range(args.seeds)]
    for cfg, (final, log) in zip(configs, run_many(configs)):
        write_outputs(cfg, log, args.out / f"{cfg.name}-seed{cfg.seed}", final)
        last = log.records[-1]
        metrics = " ".join(f"{k}={v:.4g}" for k, v in last.metrics.items())
        p = "" if last.p is None else f" p={last.p:.3f}"
        print(f"{cfg.name:20s} seed {cfg.seed:2d}  iter {last.iteration}{p}  {metrics}")


if __name__ == "__main__":
    main()

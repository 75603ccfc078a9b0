#!/usr/bin/env python3
"""Run a leave-one-subject-out grid from a config file and print cell means.

Example::

    python scripts/run_grid.py scripts/configs/acceptance_ordering.cfg --out runs/ordering
"""

import argparse
import logging
import time
from pathlib import Path

from kinpred.cli import CONFIG_ECHO, load_subjects, write_grid_artifacts
from kinpred.config import resolve_config
from kinpred.evaluation.crossval import loso_crossval


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", type=Path)
    ap.add_argument("--out", type=Path, default=None, help="artifact directory")
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    flags = {"out": str(args.out) if args.out else None, "jobs": args.jobs}
    cfg = resolve_config(flags, args.config)
    t0 = time.perf_counter()
    grid = loso_crossval(load_subjects(cfg), cfg.crossval_config())
    elapsed = time.perf_counter() - t0

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / CONFIG_ECHO)
    write_grid_artifacts(grid, out)

    print(f"{'predictor':<9} {'feature':<7} {'T_ms':>5} {'mean_rmse':>10}  per-subject")
    for P, F, T in sorted({(r[0], r[1], r[2]) for r in grid.keys()}):
        v = grid.values(P, F, T)
        print(f"{P:<9} {F:<7} {T:>5} {v.mean():>10.3f}  " + " ".join(f"{x:.2f}" for x in v))
    print(f"{len(grid.failures)} failed cells, {elapsed / 60:.1f} min -> {out}")


if __name__ == "__main__":
    main()

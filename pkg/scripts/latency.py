#!/usr/bin/env python3
"""Time one full-size forward pass: extractor on 60 windows plus the predictor."""

import argparse
import time

import numpy as np

from kinpred.neural.nets import KinPreNet, NetShape, SequenceBatch


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args(argv)
    dtype = np.dtype(args.dtype)
    shape = NetShape()
    net = KinPreNet.init("FL", shape, seed=0, dtype=dtype)
    rng = np.random.default_rng(0)
    batch = SequenceBatch(
        theta=rng.standard_normal((shape.seq_len, 1)).astype(dtype),
        windows=rng.standard_normal((shape.seq_len, 1, shape.ext_steps, shape.channels)).astype(dtype))
    net.forward(batch)
    times = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        net.forward(batch)
        times.append(1000 * (time.perf_counter() - t0))
    print(f"{args.dtype}: median {np.median(times):.2f} ms, min {np.min(times):.2f} ms "
          f"over {args.repeats} runs")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Calibrate the acquisition detection threshold on noise-only feeds.

Runs seeded Monte Carlo trials of the full code-phase/Doppler search
against pure noise and prints percentiles of the peak metric.  The shipped
DEFAULT_ACQUISITION_THRESHOLD in meaclab.receiver is fixed from this run:
slightly above the 99th percentile so the false-alarm rate stays at or
below 1%.
"""

import argparse

import numpy as np

from meaclab.receiver import ReceiverConfig, acquire
from meaclab.signals import IqBuffer

FS = 1.023e6


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=20240501)
    ap.add_argument("--prn", type=int, default=7)
    args = ap.parse_args()

    cfg = ReceiverConfig(acquisition_threshold=np.inf)
    n = int(round(FS * cfg.acquisition_duration_s))
    rng = np.random.default_rng(args.seed)
    metrics = np.empty(args.trials)
    for i in range(args.trials):
        noise = (rng.normal(size=n) + 1j * rng.normal(size=n)) / np.sqrt(2)
        feed = IqBuffer(noise, FS)
        metrics[i] = acquire(feed, args.prn, cfg).peak_metric
        if (i + 1) % 500 == 0:
            print(f"  {i + 1}/{args.trials} trials")

    for q in (50, 90, 99, 99.5, 99.9):
        print(f"p{q:<5} = {np.percentile(metrics, q):.4f}")
    print(f"max    = {metrics.max():.4f}")


if __name__ == "__main__":
    main()

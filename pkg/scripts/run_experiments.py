"""Run every experiment config through the CLI and collect outputs under one directory.

Usage: python3 scripts/run_experiments.py [OUT_DIR] [--quick]

--quick skips the spreading runs. Those take about a minute per geometry
at h = 0.5 and about 8 minutes per geometry on the halved mesh (one core).
"""

import argparse
import pathlib
import sys
import time

from fieldroad.cli import main

HERE = pathlib.Path(__file__).resolve().parent
RUNS = [
    ("dispersion", "dispersion.cfg"),
    ("certify-super", "conical.cfg"),
    ("certify-super", "asymptotic.cfg"),
    ("certify-sub", "subsolution.cfg"),
    ("properties", "properties.cfg"),
    ("mass-check", "properties.cfg"),
]
SLOW = [
    ("speed", "speed_D5.cfg"),
    ("speed", "speed_D1.5.cfg"),
    ("speed", "speed_D5_fine.cfg"),
]


def run(out: pathlib.Path, quick: bool) -> int:
    failed = 0
    for command, cfg in RUNS + ([] if quick else SLOW):
        dest = out / f"{command}-{pathlib.Path(cfg).stem}"
        t0 = time.perf_counter()
        rc = main([command, "--config", str(HERE / "configs" / cfg), "--out", str(dest)])
        print(f"[{rc}] {command} {cfg} ({time.perf_counter() - t0:.1f}s) -> {dest}", flush=True)
        failed += rc != 0
    return failed


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="results")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    sys.exit(1 if run(pathlib.Path(args.out), args.quick) else 0)

"""Desk benchmark: all seven strategies, three seeds, 64 and 128 pixel scenes.

Writes results/benchmark.csv (one row per run, with wall time), the
plain-text report results/benchmark.txt, the config used, and per-run
checkpoints and training logs under results/runs/. Takes a few hours on
one core.

    python demos/run_benchmark.py [--seeds 0,1,2] [--out results]
"""

import argparse
import logging
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from nfseg.harness import Comparison, ExperimentConfig, compare

HERE = Path(__file__).resolve().parent

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--config", default=str(HERE / "benchmark.ini"))
parser.add_argument("--seeds", default="0,1,2")
parser.add_argument("--sizes", default="64,128")
parser.add_argument("--out", default=str(HERE.parent / "results"))
args = parser.parse_args()

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
out = Path(args.out)
(out / "runs").mkdir(parents=True, exist_ok=True)
config = ExperimentConfig.from_file(args.config)
config.save(out / "benchmark.ini")
partial = Comparison()


def progress(run):
    # rewrite the CSV after every run so an interrupted benchmark keeps what it finished
    partial.runs.append(run)
    (out / "benchmark.csv").write_text(partial.to_csv(include_runtime=True))


start = time.perf_counter()
with threadpool_limits(1):
    result = compare(config, [int(s) for s in args.seeds.split(",")],
                     sizes=[int(s) for s in args.sizes.split(",")],
                     out_dir=str(out / "runs"), progress=progress)
hours = (time.perf_counter() - start) / 3600

report = result.table() + result.trend_text() + f"total wall time {hours:.2f} h\n"
(out / "benchmark.txt").write_text(report)
print(report, end="")

"""Train and evaluate all seven conditioning strategies and tabulate the results.

Every strategy trains on the same data (the template's ``data_seed``) so the
strategies differ only in decoder and initialization seed. Runs execute one
after another; each is deterministic on its own, so the report does not
depend on scheduling.
"""

from __future__ import annotations

import io
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..decoders import STRATEGIES
from ..metrics import CSV_HEADER, MetricsReport, format_value
from .checkpoint import save_checkpoint
from .training import evaluate, load_dataset, train

log = logging.getLogger(__name__)

RUN_COLUMNS = ["size", "strategy", "code_source", "best_val_iou", "epoch", "step"]

# parameter counts reported for the full-scale decoders, for side-by-side display
FULL_SCALE_PARAMS = {
    ("concat", "global"): "2.1M", ("concat", "local"): "2.1M", ("concat", "combined"): "2.1M",
    ("film", "global"): "4.0M", ("film", "local"): "4.0M", ("film", "combined"): "3.7M",
    ("cross_attention", "tokens"): "2.6M",
}


@dataclass
class RunResult:
    size: int
    strategy: str
    code_source: str
    seed: int
    report: MetricsReport
    best_val_iou: float
    epoch: int
    step: int
    runtime_s: float = 0.0

    def csv_row(self, include_runtime=False):
        head = [str(self.size), self.strategy, self.code_source, format_value(self.best_val_iou),
                str(self.epoch), str(self.step)]
        return ",".join(head) + "," + self.report.csv_row(include_runtime)


@dataclass
class Comparison:
    runs: list = field(default_factory=list)

    @property
    def sizes(self):
        return sorted({r.size for r in self.runs})

    @property
    def seeds(self):
        return sorted({r.seed for r in self.runs})

    def select(self, size, strategy, code_source):
        return [r for r in self.runs
                if (r.size, r.strategy, r.code_source) == (size, strategy, code_source)]

    def values(self, size, strategy, code_source, metric="aggregate_iou"):
        return [getattr(r.report, metric) for r in self.select(size, strategy, code_source)]

    def median(self, size, strategy, code_source, metric="aggregate_iou"):
        vals = self.values(size, strategy, code_source, metric)
        return float(np.median(vals)) if vals else float("nan")

    def to_csv(self, include_runtime=False):
        """One row per run. Runtime is left blank by default so reruns compare byte-for-byte."""
        buf = io.StringIO()
        buf.write(",".join(RUN_COLUMNS + CSV_HEADER) + "\n")
        for r in self.runs:
            buf.write(r.csv_row(include_runtime) + "\n")
        return buf.getvalue()

    def table(self):
        """Plain-text report: per size, one row per strategy with medians and per-seed IoU."""
        buf = io.StringIO()
        seeds = self.seeds
        for size in self.sizes:
            buf.write(f"image size {size}x{size}, median over seeds {seeds}\n")
            buf.write(f"{'strategy':<17}{'code':<10}{'IoU':>8}{'F':>8}{'mIoU':>8}"
                      f"{'Params':>10}{'full':>7}   per-seed IoU\n")
            for strategy, source in STRATEGIES:
                runs = self.select(size, strategy, source)
                if not runs:
                    continue
                per_seed = " ".join(format_value(r.report.aggregate_iou) for r in runs)
                buf.write(f"{strategy:<17}{source:<10}"
                          f"{self.median(size, strategy, source):>8.3f}"
                          f"{self.median(size, strategy, source, 'aggregate_f'):>8.3f}"
                          f"{self.median(size, strategy, source, 'mean_iou'):>8.3f}"
                          f"{runs[0].report.params:>10d}"
                          f"{FULL_SCALE_PARAMS[(strategy, source)]:>7}   {per_seed}\n")
            buf.write("\n")
        return buf.getvalue()

    def trends(self):
        """The two qualitative observations the comparison is meant to reproduce.

        ``attention_beats_global``: at every size, the cross-attention median
        aggregate IoU is at least the concat/global one. ``global_degrades``:
        concat/global at the largest size is no better than at the smallest.
        """
        out = {}
        sizes = self.sizes
        gaps = {s: (self.median(s, "cross_attention", "tokens"),
                    self.median(s, "concat", "global")) for s in sizes}
        out["attention_beats_global"] = (all(a >= g for a, g in gaps.values()), gaps)
        if len(sizes) >= 2:
            small = self.median(sizes[0], "concat", "global")
            large = self.median(sizes[-1], "concat", "global")
            out["global_degrades"] = (large <= small, {sizes[0]: small, sizes[-1]: large})
        return out

    def trend_text(self):
        lines = []
        for name, (ok, detail) in self.trends().items():
            lines.append(f"{name}: {'holds' if ok else 'VIOLATED'}")
            for key, val in detail.items():
                lines.append(f"  {key}: {val}")
        if not all(ok for ok, _ in self.trends().values()):
            lines.append("per-seed aggregate IoU:")
            for size in self.sizes:
                for strategy, source in (("concat", "global"), ("cross_attention", "tokens")):
                    vals = ", ".join(format_value(v) for v in self.values(size, strategy, source))
                    lines.append(f"  {size} {strategy}/{source}: {vals}")
        return "\n".join(lines) + "\n"


def compare(config, seeds, sizes=(64, 128), strategies=STRATEGIES, out_dir=None,
            progress=None):
    """Train every strategy for every size and seed; evaluate best checkpoints on the test split.

    ``config`` is a template ``ExperimentConfig``; strategy, image size and
    seed are filled in per run. With ``out_dir`` each run's checkpoint and
    training log are written there.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("compare needs at least one seed")
    result = Comparison()
    for size in sizes:
        sized = config.replace(image_size=int(size))
        dataset = load_dataset(sized)
        for strategy, source in strategies:
            for seed in seeds:
                cfg = sized.replace(strategy=strategy, code_source=source, seed=seed)
                start = time.perf_counter()
                trained = train(cfg, dataset)
                report = evaluate(trained.checkpoint, dataset.test)
                # the CSV runtime covers training and evaluation, not evaluation alone
                report = replace(report, runtime_s=time.perf_counter() - start)
                ckpt = trained.checkpoint
                run = RunResult(size, strategy, source, seed, report, ckpt.best_val_iou,
                                ckpt.epoch, ckpt.step, report.runtime_s)
                result.runs.append(run)
                log.info("size %d %s/%s seed %d: test IoU %.4f (%.0fs)", size, strategy,
                         source, seed, report.aggregate_iou, run.runtime_s)
                if out_dir is not None:
                    stem = os.path.join(out_dir, f"{size}_{strategy}_{source}_seed{seed}")
                    save_checkpoint(stem + ".ckpt", ckpt)
                    with open(stem + ".log", "w") as fh:
                        fh.write(trained.log_text())
                if progress is not None:
                    progress(run)
    return result

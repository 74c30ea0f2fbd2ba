import csv
import logging
import math
import os
from datetime import datetime

from sdforward.config import config

logger = logging.getLogger(__name__)

RUN_COLUMNS = ["label", "r", "seed", "converged", "sup_norm", "time_to_ball", "reason", "timestamp"]


def setup_logging(level: str | None = None, log_file: str | None = None) -> None:
    """Root logging setup used by the CLI entry point."""
    handlers = [logging.StreamHandler()]
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, (level or config.LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


class RunLogger:
    """
    Per-run bookkeeping for simulation batches: counts converged and
    failed runs, tallies failure reasons and, when a CSV path is given,
    appends one row per run.
    """

    def __init__(self, csv_file=None):
        self.csv_file = csv_file
        self.stats = {
            "converged": 0,
            "failed": 0,
            "failure_reasons": {},
            "slowest": None,
        }

        if self.csv_file and not os.path.exists(self.csv_file):
            os.makedirs(os.path.dirname(os.path.abspath(self.csv_file)), exist_ok=True)
            with open(self.csv_file, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(RUN_COLUMNS)

    def log_run(self, label, r, seed, converged, sup_norm, time_to_ball, reason=""):
        if converged:
            self.stats["converged"] += 1
            slowest = self.stats["slowest"]
            if slowest is None or time_to_ball > slowest[1]:
                self.stats["slowest"] = (label, time_to_ball)
            logger.debug(f"CONVERGED: {label} r={r} t_ball={time_to_ball:.6g}")
        else:
            self.stats["failed"] += 1
            self.stats["failure_reasons"][reason] = self.stats["failure_reasons"].get(reason, 0) + 1
            logger.info(f"FAILED: {label} r={r} - Reason: {reason}")

        if self.csv_file:
            with open(self.csv_file, "a", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(
                    [
                        label,
                        repr(float(r)),
                        seed,
                        int(bool(converged)),
                        "" if sup_norm is None else repr(float(sup_norm)),
                        repr(float(time_to_ball)) if math.isfinite(time_to_ball) else "inf",
                        reason,
                        datetime.now().isoformat(),
                    ]
                )

    def get_summary(self):
        summary = [
            "\n--- Run Summary ---",
            f"Total Runs: {self.stats['converged'] + self.stats['failed']}",
            f"Converged: {self.stats['converged']}",
            f"Failed: {self.stats['failed']}",
        ]
        if self.stats["slowest"] is not None:
            label, t = self.stats["slowest"]
            summary.append(f"Slowest convergence: {label} ({t:.6g})")
        if self.stats["failure_reasons"]:
            summary.append("\nFailure Reasons:")
            for reason, count in sorted(self.stats["failure_reasons"].items(), key=lambda x: x[1], reverse=True):
                summary.append(f"  - {reason}: {count}")
        summary.append("-------------------\n")
        return "\n".join(summary)

    def print_summary(self):
        print(self.get_summary())

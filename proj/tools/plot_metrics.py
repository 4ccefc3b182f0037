#!/usr/bin/env python3
# Copyright 2026 The fedp3-sim Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Plot one or more metrics.csv files produced by the fedp3 subcommand.

Usage: plot_metrics.py out/run_a/metrics.csv [out/run_b/metrics.csv ...]

Writes metrics.png next to the first input. Labels default to the parent
directory names. Optional post-processing only; the simulator itself never
depends on this.
"""

import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    rounds, loss, acc, up = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rounds.append(int(row["round"]))
            loss.append(float(row["loss"]))
            acc.append(float(row["accuracy"]))
            up.append(int(row["up_scalars_cum"]))
    return rounds, loss, acc, up


def main(argv):
    if len(argv) < 2:
        print(__doc__, file=sys.stderr)
        return 2
    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    for path in argv[1:]:
        label = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
        rounds, loss, acc, up = load(path)
        axes[0].plot(rounds, loss, label=label)
        axes[1].plot(rounds, acc, label=label)
        axes[2].plot(up, acc, label=label)
    axes[0].set_xlabel("round")
    axes[0].set_ylabel("train loss")
    axes[1].set_xlabel("round")
    axes[1].set_ylabel("test accuracy")
    axes[2].set_xlabel("uploaded scalars (cumulative)")
    axes[2].set_ylabel("test accuracy")
    for ax in axes:
        ax.legend()
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out = os.path.join(os.path.dirname(os.path.abspath(argv[1])),
                       "metrics.png")
    fig.savefig(out, dpi=120)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))

#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Static RD and training-curve plots from a sweep directory (summary.csv + *.log.jsonl)."""

import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def rd_plot(summary, out):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for setting, g in summary.groupby("setting", sort=False):
        g = g.sort_values("bpp")
        axes[0].plot(g.bpp, g.psnr, "o-", label=setting)
        axes[1].plot(g.bpp, g.msssim, "o-", label=setting)
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].set_ylabel("MS-SSIM")
    for ax in axes:
        ax.set_xlabel("bpp")
        ax.grid(alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def curve_plot(sweep, out):
    logs = sorted(sweep.glob("*.log.jsonl"))
    if not logs:
        return False
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in logs:
        recs = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        if recs:
            ax.plot([r["step"] for r in recs], [r["loss"] for r in recs],
                    label=path.name.removesuffix(".log.jsonl"), lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return True


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("sweep", type=Path)
    ap.add_argument("--out", type=Path, help="output directory (default: the sweep directory)")
    args = ap.parse_args()
    out = args.out or args.sweep
    out.mkdir(parents=True, exist_ok=True)
    summary_path = args.sweep / "summary.csv"
    if summary_path.exists():
        rd_plot(pd.read_csv(summary_path), out / "rd.png")
        print(f"wrote {out / 'rd.png'}")
    if curve_plot(args.sweep, out / "training.png"):
        print(f"wrote {out / 'training.png'}")


if __name__ == "__main__":
    main()

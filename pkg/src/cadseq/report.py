"""Report writers for batch evaluation and round-trip runs: delimited
CSV, a JSON mirror carrying the effective config and its hash, and PNG
charts rendered next to them."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import IoError


def config_digest(config: dict) -> str:
    """Stable sha256 of a config mapping (sorted-key JSON)."""
    blob = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        raise IoError(f"no rows to write to {path}")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def _bar_figure(path: Path, names: list[str], values: list[float],
                title: str, ylabel: str, hline: float | None = None) -> None:
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(names) + 2.0), 4.0))
    ax.bar(range(len(names)), values, color="#4878a8")
    if hline is not None:
        ax.axhline(hline, color="#b04040", linestyle="--", linewidth=1,
                   label=f"tolerance {hline:g}")
        ax.legend()
        ax.set_yscale("log")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_roundtrip_report(outdir, rows: list[dict], config: dict) -> dict:
    """Emit roundtrip.csv / roundtrip.json / roundtrip_cd.png.

    Each row carries name, chamfer, closure_residual, seconds. Returns
    the JSON payload (also written to disk)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": config,
        "config_sha256": config_digest(config),
        "fixtures": rows,
        "worst_chamfer": max(r["chamfer"] for r in rows),
        "worst_closure_residual": max(r["closure_residual"] for r in rows),
        "total_seconds": sum(r["seconds"] for r in rows),
    }
    _write_csv(outdir / "roundtrip.csv", rows)
    (outdir / "roundtrip.json").write_text(json.dumps(payload, indent=2))
    names = [r["name"] for r in rows]
    # log-scale bars need a strictly positive floor
    cds = [max(r["chamfer"], 1e-18) for r in rows]
    _bar_figure(outdir / "roundtrip_cd.png", names, cds,
                "Round-trip chamfer distance per fixture", "chamfer",
                hline=1e-6)
    return payload


def write_eval_report(outdir, rows: list[dict], population: dict,
                      config: dict) -> dict:
    """Emit report.csv / report.json / eval_chamfer.png / eval_pr.png.

    rows hold per-pair metrics (name, chamfer, acc_err, comp_err,
    seg_acc, precision, recall, hanging_faces); population holds the
    set-level numbers (mmd, cov, jsd, and optionally ir/nov/uniq)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": config,
        "config_sha256": config_digest(config),
        "pairs": rows,
        "population": population,
    }
    _write_csv(outdir / "report.csv", rows)
    (outdir / "report.json").write_text(json.dumps(payload, indent=2))
    names = [r["name"] for r in rows]
    _bar_figure(outdir / "eval_chamfer.png", names,
                [r["chamfer"] for r in rows],
                "Chamfer distance per pair", "chamfer")
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.scatter([r["precision"] for r in rows], [r["recall"] for r in rows],
               color="#4878a8")
    for r in rows:
        ax.annotate(r["name"], (r["precision"], r["recall"]), fontsize=6,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xlim(-0.05, 1.05)
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("primitive precision")
    ax.set_ylabel("primitive recall")
    ax.set_title("Primitive matching per pair")
    fig.tight_layout()
    fig.savefig(outdir / "eval_pr.png", dpi=120)
    plt.close(fig)
    return payload

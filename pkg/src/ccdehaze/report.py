"""Experiment reports: line-delimited JSON plus a plain-text table."""
from __future__ import annotations

import hashlib
import json
import os

from .evalharness import EvaluationRun


def file_digest(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]


def evaluation_row(name: str, run: EvaluationRun, checkpoint: str | None, config_hash: str, base_dir: str) -> dict:
    return {
        "name": name,
        "status": "ok",
        "psnr": run.dehazed.psnr,
        "ssim": run.dehazed.ssim,
        "accuracy": run.accuracy_columns("dehazed"),
        "sample_count": run.dehazed.sample_count,
        "failed_count": len(run.failed),
        "checkpoint": os.path.relpath(checkpoint, base_dir) if checkpoint else None,
        "config_hash": config_hash,
    }


def hazy_row(run: EvaluationRun) -> dict:
    return {
        "name": "Hazy",
        "psnr": run.hazy.psnr,
        "ssim": run.hazy.ssim,
        "accuracy": run.accuracy_columns("hazy"),
        "sample_count": run.hazy.sample_count,
    }


def failed_row(name: str, error: str, config_hash: str) -> dict:
    return {"name": name, "status": "failed", "error": error, "psnr": None, "ssim": None, "accuracy": {}, "config_hash": config_hash}


def _fmt(value, digits):
    return "-" if value is None else f"{value:.{digits}f}"


def render_table(rows: list[dict]) -> str:
    acc_names = []
    for row in rows:
        for name in row.get("accuracy", {}):
            if name not in acc_names:
                acc_names.append(name)
    header = ["", "PSNR", "SSIM"] + acc_names
    body = []
    for row in rows:
        if row.get("status") == "failed":
            body.append([row["name"], "FAILED", ""] + [""] * len(acc_names))
            continue
        accs = row.get("accuracy", {})
        body.append([row["name"], _fmt(row["psnr"], 4), _fmt(row["ssim"], 4)] + [_fmt(accs.get(n), 1) for n in acc_names])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [sep]
    for r in [header] + body:
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |")
        lines.append(sep)
    return "\n".join(lines) + "\n"


def write_report(out_dir, rows: list[dict], meta: dict, stem: str = "report") -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    jsonl = os.path.join(out_dir, stem + ".jsonl")
    with open(jsonl, "w") as f:
        f.write(json.dumps({"kind": "meta", **meta}, sort_keys=True) + "\n")
        for row in rows:
            f.write(json.dumps({"kind": "row", **row}, sort_keys=True) + "\n")
    txt = os.path.join(out_dir, stem + ".txt")
    with open(txt, "w") as f:
        f.write(render_table(rows))
    return jsonl, txt


def read_report(path) -> tuple[dict, list[dict]]:
    with open(path) as f:
        records = [json.loads(line) for line in f if line.strip()]
    meta = next(r for r in records if r["kind"] == "meta")
    return meta, [r for r in records if r["kind"] == "row"]

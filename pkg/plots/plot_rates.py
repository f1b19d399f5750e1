#!/usr/bin/env python3
"""Render the decay-rate figures for a finished run directory.

Reads report.json and the run's CSV tables, draws one log-log figure per
tracked rate (data points, the fitted slope from the report, and a guide
line with the predicted exponent), and writes a one-page HTML summary.

This is a read-only consumer: every number on a figure comes from
report.json or a CSV.  Nothing is recomputed, and the script must not
import the simulation package (tests lint for that).

Usage:
    plot_rates.py RUN_DIR [--format png|pdf]

Outputs land in RUN_DIR/figures/.  Exits nonzero if the config hashes of
the run's files disagree with report.json.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

# quantity -> (csv file, column, collapse rows to per-time sup?)
SERIES_SOURCE = {
    "supE": ("fields.csv", "supE", False),
    "supGradE": ("fields.csv", "supGradE", False),
    "supHessE": ("fields.csv", "supHessE", False),
    "V_limit": ("wave.csv", "diff2", True),
    "A_t_limit": ("a_t.csv", "diff_to_ainf", True),
    "W1_weighted": ("wave.csv", "wdiff1", True),
    "W2": ("wave.csv", "diff2", True),
    "F1_weighted": ("residual.csv", "f1_sup", False),
    "residual": ("residual.csv", "residual_ref", False),
}

TITLES = {
    "supE": "force field sup norm",
    "supGradE": "force field gradient sup norm",
    "supHessE": "force field second derivative sup norm",
    "V_limit": "momentum-limit convergence",
    "A_t_limit": "velocity-correction convergence",
    "W1_weighted": "wave operator, weighted position part",
    "W2": "wave operator, momentum part",
    "F1_weighted": "transport field, weighted first component",
    "residual": "modified-scattering residual",
}


def read_table(path: str) -> tuple[str, dict[str, np.ndarray]]:
    """(config hash, column dict) from a CSV with a leading hash comment."""
    with open(path) as f:
        lines = f.readlines()
    file_hash = ""
    if lines and lines[0].startswith("# config_hash="):
        file_hash = lines[0].strip().split("=", 1)[1]
    body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    names = [c.strip() for c in body[0].split(",")]
    data = np.loadtxt(io.StringIO("".join(body[1:])), delimiter=",", ndmin=2)
    return file_hash, {name: data[:, i] for i, name in enumerate(names)}


def sup_by_time(t: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ts = np.unique(t)
    return ts, np.array([y[t == tv].max() for tv in ts])


def save_kwargs(fmt: str) -> dict:
    # strip volatile metadata so reruns produce identical bytes
    if fmt == "pdf":
        return {"metadata": {"CreationDate": None}}
    return {"metadata": {"Software": ""}}


def render_entry(entry: dict, t: np.ndarray, y: np.ndarray, out_path: str,
                 fmt: str) -> dict:
    lo, hi = entry["window"]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.loglog(t, y, "o", ms=3.5, color="#1f5fa8", label="measured")
    drawn = {"data": True, "fitted": False, "predicted": False}
    win = (t >= lo) & (t <= hi) & (y > 0)
    if entry.get("fitted_exponent") is not None:
        tw = np.geomspace(max(lo, t[win].min()), hi, 64)
        fit_line = np.exp(entry["intercept"]) * tw ** entry["fitted_exponent"]
        ax.loglog(tw, fit_line, "-", color="#c44e52",
                  label=f"fitted slope {entry['fitted_exponent']:+.3f}")
        drawn["fitted"] = True
        anchor = np.exp(entry["intercept"]) * tw[0] ** entry["fitted_exponent"]
        guide = anchor * (tw / tw[0]) ** entry["predicted_exponent"]
        ax.loglog(tw, guide, "--", color="#555555",
                  label=f"predicted slope {entry['predicted_exponent']:+.2f}")
        drawn["predicted"] = True
    ax.set_xlabel("t")
    ax.set_ylabel(entry["quantity"])
    status = "pass" if entry.get("pass") else "FAIL"
    r2 = entry.get("r_squared")
    ax.set_title(f"{TITLES[entry['quantity']]} [{status}"
                 + (f", r2={r2:.4f}]" if r2 is not None else "]"), fontsize=10)
    ax.legend(fontsize=8)
    ax.axvspan(lo, hi, color="#999999", alpha=0.12, lw=0)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130, **save_kwargs(fmt))
    plt.close(fig)
    return drawn


def write_summary(fig_dir: str, report: dict, figures: list[dict]) -> str:
    rows = []
    for item in figures:
        e = item["entry"]
        status = "trivial" if e.get("trivial") else ("pass" if e["pass"] else "fail")
        fitted = "-" if e.get("fitted_exponent") is None else f"{e['fitted_exponent']:+.4f}"
        r2 = "-" if e.get("r_squared") is None else f"{e['r_squared']:.4f}"
        img = (f'<a href="{item["file"]}">{item["file"]}</a>'
               if item.get("file") else "-")
        rows.append(f"<tr><td>{e['quantity']}</td>"
                    f"<td>{e['predicted_exponent']:+.2f}</td><td>{fitted}</td>"
                    f"<td>{r2}</td><td class='{status}'>{status}</td>"
                    f"<td>{img}</td></tr>")
    imgs = "\n".join(f'<div><img src="{item["file"]}" alt="{item["entry"]["quantity"]}"></div>'
                     for item in figures if item.get("file", "").endswith(".png"))
    html = f"""<!DOCTYPE html>
<html><head><meta charset="utf-8"><title>decay-rate report</title>
<style>
body {{ font-family: sans-serif; margin: 2em; }}
table {{ border-collapse: collapse; }}
td, th {{ border: 1px solid #bbb; padding: 4px 10px; }}
td.pass {{ color: #2a7a2a; }} td.fail {{ color: #b02020; }}
img {{ max-width: 560px; margin: 8px 0; }}
</style></head><body>
<h1>Decay-rate report</h1>
<p>config hash <code>{report["config_hash"]}</code>,
alpha = {report["alpha"]}, t_final = {report["t_final"]}</p>
<table>
<tr><th>quantity</th><th>predicted</th><th>fitted</th><th>r&sup2;</th>
<th>status</th><th>figure</th></tr>
{os.linesep.join(rows)}
</table>
{imgs}
</body></html>
"""
    path = os.path.join(fig_dir, "index.html")
    with open(path, "w", newline="\n") as f:
        f.write(html)
    return path


def write_trivial_page(fig_dir: str, report: dict) -> str:
    path = os.path.join(fig_dir, "index.html")
    with open(path, "w", newline="\n") as f:
        f.write("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
                "<title>decay-rate report</title></head><body>\n"
                "<h1>Trivial run</h1>\n"
                f"<p>config hash <code>{report['config_hash']}</code>: "
                "all tracked series are at round-off level (zero-amplitude "
                "data); there are no rates to plot.</p>\n</body></html>\n")
    return path


def plot_rates(run_dir: str, fmt: str = "png") -> list[dict]:
    """Render all figures for a run directory; returns the manifest."""
    report_path = os.path.join(run_dir, "report.json")
    if not os.path.exists(report_path):
        raise FileNotFoundError(f"{report_path} not found; run the rates stage first")
    with open(report_path) as f:
        report = json.load(f)
    cfg_hash = report["config_hash"]

    tables = {}
    for fname in ("fields.csv", "wave.csv", "a_t.csv", "residual.csv"):
        path = os.path.join(run_dir, fname)
        if not os.path.exists(path):
            raise FileNotFoundError(f"{path} not found")
        file_hash, table = read_table(path)
        if file_hash and file_hash != cfg_hash:
            raise ValueError(f"{fname}: config hash {file_hash} does not match "
                             f"report hash {cfg_hash}")
        tables[fname] = table

    fig_dir = os.path.join(run_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    entries = report["entries"]
    manifest = []
    if all(e.get("trivial") for e in entries):
        write_trivial_page(fig_dir, report)
        return manifest

    for entry in entries:
        name = entry["quantity"]
        fname, column, collapse = SERIES_SOURCE[name]
        table = tables[fname]
        t, y = (sup_by_time(table["t"], table[column]) if collapse
                else (table["t"], table[column]))
        item = {"entry": entry, "file": None, "drawn": {}}
        if not entry.get("trivial"):
            out_name = f"{name}.{fmt}"
            item["drawn"] = render_entry(entry, t, y,
                                         os.path.join(fig_dir, out_name), fmt)
            item["file"] = out_name
        manifest.append(item)
    write_summary(fig_dir, report, manifest)
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", help="run directory with report.json and CSVs")
    parser.add_argument("--format", choices=("png", "pdf"), default="png")
    args = parser.parse_args(argv)
    try:
        manifest = plot_rates(args.run_dir, args.format)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    n_fig = sum(1 for item in manifest if item["file"])
    print(f"{n_fig} figures written to {os.path.join(args.run_dir, 'figures')}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

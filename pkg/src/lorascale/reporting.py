"""CSV, manifest, and figure emission for scans and sweeps.

Every table goes out as RFC-4180-style CSV: header row, '.' decimal
separator, floats at 17 significant digits (lossless for doubles),
lines ending in '\\n'.  Each output file is accompanied by a JSON
manifest recording the command, every resolved parameter, the seed,
the tool version, and timestamps, so any row can be regenerated in
isolation.  Sweep tables can also be rendered as an SVG figure: final
EMA loss against log2 learning rate, one polyline per rank plus full
finetuning, enlarged markers at the per-key optima.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from . import __version__
from .errors import DomainError, IoError, NoOptimumError
from .lr_sweep import SweepTable, select_best_lr
from .signsgd import FFT

SWEEP_COLUMNS = (
    "scheme", "gamma", "rank_or_fft", "log2_eta", "seed_group",
    "final_train_loss_ema", "diverged", "best_flag", "seed", "config_id",
)
SCAN_COLUMNS = (
    "config_id", "scheme", "gamma", "eta_rule", "n", "r", "eta",
    "step", "quantity", "rms", "n_seeds", "seed",
)
LEMMA_COLUMNS = (
    "lemma", "params", "mean", "std_error", "target", "z_score", "pass",
    "seed", "config_id",
)
FIT_COLUMNS = (
    "quantity", "axis", "slope", "intercept", "r_squared",
    "predicted_slope", "pass", "seed", "config_id",
)


def format_value(value: object) -> str:
    """Render one CSV cell: bools as true/false, floats at 17 digits."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_csv(
    rows: Sequence[Mapping[str, object]],
    path: str,
    columns: Sequence[str] | None = None,
) -> None:
    """Write rows as CSV with a header; empty input yields header only.

    Columns default to the first row's keys; every row must carry
    exactly those keys.  Row order is preserved, so callers pass rows
    already deterministically sorted.
    """
    if columns is None:
        if not rows:
            raise DomainError("cannot infer columns from an empty result set")
        columns = list(rows[0].keys())
    for row in rows:
        if set(row.keys()) != set(columns):
            raise DomainError(
                f"row keys {sorted(row.keys())} do not match columns {sorted(columns)}"
            )
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(row[c]) for c in columns])
    except OSError as exc:
        raise IoError(f"cannot write CSV {path}: {exc}") from exc


def read_csv(path: str) -> tuple[list[str], list[dict[str, str]]]:
    """Read a CSV written by emit_csv back as header plus string rows."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise IoError(f"CSV {path} is empty") from None
            rows = [dict(zip(header, rec)) for rec in reader]
    except OSError as exc:
        raise IoError(f"cannot read CSV {path}: {exc}") from exc
    return header, rows


def config_id(parameters: Mapping[str, object]) -> str:
    """Short stable digest of a resolved parameter set."""
    canon = json.dumps(parameters, sort_keys=True, default=str)
    return hashlib.blake2b(canon.encode(), digest_size=6).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce an output file's numbers."""

    command: str
    parameters: Mapping[str, object]
    seed: int
    tool_version: str = __version__
    started_at: str = ""
    finished_at: str = ""

    def config_id(self) -> str:
        return config_id(self.parameters)

    def to_json(self) -> str:
        payload = {
            "command": self.command,
            "parameters": dict(self.parameters),
            "seed": self.seed,
            "config_id": self.config_id(),
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def manifest_path(output_path: str) -> str:
    return output_path + ".manifest.json"


def write_manifest(manifest: RunManifest, output_path: str) -> str:
    """Write the side-car manifest for an output file; returns its path."""
    side = manifest_path(output_path)
    try:
        with open(side, "w", encoding="utf-8") as fh:
            fh.write(manifest.to_json())
    except OSError as exc:
        raise IoError(f"cannot write manifest {side}: {exc}") from exc
    return side


def _key_sort(key: object) -> tuple[int, int | str]:
    return (1, str(key)) if key == FFT else (0, int(key))  # ranks first, fft last


def sweep_rows(
    table: SweepTable,
    scheme: str,
    gamma: float,
    seed: int,
    cfg_id: str,
) -> list[dict[str, object]]:
    """Per-replicate sweep rows in the documented column order.

    best_flag marks every replicate row of the cell holding the
    seed-averaged optimum for its key; keys where every learning rate
    diverged carry no flag.
    """
    best: dict[object, int] = {}
    for key in table.keys:
        try:
            best[key] = select_best_lr(table, key)
        except NoOptimumError:
            pass  # all diverged: no optimum to flag
    rows = []
    for rec in table.per_seed:
        key = rec["key"]
        rows.append(
            {
                "scheme": scheme,
                "gamma": gamma,
                "rank_or_fft": key,
                "log2_eta": rec["log2_eta"],
                "seed_group": rec["seed_group"],
                "final_train_loss_ema": float(rec["final_loss_ema"]),
                "diverged": bool(rec["diverged"]),
                "best_flag": best.get(key) == rec["log2_eta"],
                "seed": seed,
                "config_id": cfg_id,
            }
        )
    rows.sort(key=lambda r: (_key_sort(r["rank_or_fft"]), r["log2_eta"], r["seed_group"]))
    return rows


def scan_rows(
    results: Sequence,
    scheme: str,
    gamma: float,
    eta_rule_label: str,
    n_seeds: int,
    seed: int,
    cfg_id: str,
) -> list[dict[str, object]]:
    """Flatten CellResult records to scan CSV rows, deterministically sorted."""
    rows = []
    for cell in results:
        for quantity in sorted(cell.rms):
            for step in sorted(cell.rms[quantity]):
                rows.append(
                    {
                        "config_id": cfg_id,
                        "scheme": scheme,
                        "gamma": gamma,
                        "eta_rule": eta_rule_label,
                        "n": cell.n,
                        "r": cell.r,
                        "eta": cell.eta,
                        "step": step,
                        "quantity": quantity,
                        "rms": cell.rms[quantity][step],
                        "n_seeds": n_seeds,
                        "seed": seed,
                    }
                )
    rows.sort(key=lambda r: (r["n"], r["r"], r["quantity"], r["step"]))
    return rows


def emit_sweep_plot(table: SweepTable, path: str, title: str | None = None) -> None:
    """Render a sweep table to a standalone SVG figure.

    One polyline per key (ranks then full finetuning), an enlarged
    marker at each key's optimum, a dashed vertical line at the full
    finetuning optimum when that row exists, and the y-axis clipped at
    ten times the global minimum so diverging tails stay out of frame.
    Keys with no surviving learning rate are omitted with a warning.
    """
    finite = [
        e.loss_ema for e in table.entries.values()
        if not e.diverged and math.isfinite(e.loss_ema)
    ]
    if not finite:
        raise DomainError("every cell of the sweep table diverged; nothing to plot")
    global_min = min(finite)

    matplotlib.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    try:
        fft_best: int | None = None
        for key in sorted(table.keys, key=_key_sort):
            ys = []
            for lg in table.log2_etas:
                entry = table.entries[(key, lg)]
                ys.append(float("nan") if entry.diverged else entry.loss_ema)
            if all(math.isnan(y) for y in ys):
                warnings.warn(
                    f"sweep key {key!r}: all learning rates diverged; polyline omitted",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            label = "fft" if key == FFT else f"r={key}"
            style = {"color": "black", "linewidth": 1.8} if key == FFT else {}
            (line,) = ax.plot(table.log2_etas, ys, marker=".", label=label, **style)
            best_lg = select_best_lr(table, key)
            ax.plot(
                [best_lg], [table.entries[(key, best_lg)].loss_ema],
                marker="o", markersize=11, markerfacecolor="none",
                markeredgewidth=1.8, color=line.get_color(), linestyle="none",
            )
            if key == FFT:
                fft_best = best_lg
        if fft_best is not None:
            ax.axvline(fft_best, linestyle="--", color="tab:red", linewidth=1.2)
        ax.set_ylim(top=10.0 * global_min)
        ax.set_xlabel("log2(learning rate)")
        ax.set_ylabel("final training loss (EMA)")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left", fontsize="small")
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg")
        except OSError as exc:
            raise IoError(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)

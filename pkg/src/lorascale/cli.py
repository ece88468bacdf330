"""Command line for scans, lemma checks, sweeps, prescriptions, reports.

Subcommands: verify-lemmas, scan, fit, sweep-lr, prescribe, report.
Every flag can also come from a flat key=value config file passed with
--config; explicit flags win over file values, and unknown keys are
rejected.  The master seed comes from --seed (decimal or hex), else
from the LORASCALE_SEED environment variable, else a fixed default;
whichever source wins is echoed into the output manifest.

Exit codes: 0 success, 1 usage, 2 numeric/domain, 3 I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone
from typing import Callable, Sequence

from .errors import (
    DomainError,
    IoError,
    LorascaleError,
    UsageError,
)
from .lora import INIT_A, INIT_B
from .lr_sweep import SweepEntry, SweepTable, make_task, select_best_lr, sweep
from .mc_lemmas import (
    delta1_second_moment,
    general_sign_product,
    rho_sq_expectation,
    rho_sq_symmetry_gap,
    stein_sign_product,
)
from .prescribe import transfer_lr, transfer_to_fft
from .randkit import Seed, derive, parse_seed
from .scaling import (
    R_LARGE,
    R_SMALL,
    EtaRule,
    ScalingConfig,
    fit_exponent,
    run_grid,
    theory_exponents,
)
from .signsgd import FFT

DEFAULT_SEED = 20250817
SEED_ENV_VAR = "LORASCALE_SEED"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOMAIN = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage as UsageError (exit code 1)."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from exc


def _seed_arg(text: str) -> Seed:
    try:
        return parse_seed(text)
    except LorascaleError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="lorascale", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)
    by_name: dict[str, _Parser] = {}

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sp = subs.add_parser(name, help=help_text)
        sp.add_argument("--config", help="flat key=value config file; flags override it")
        sp.add_argument("--seed", type=_seed_arg, default=None,
                        help="master seed, decimal or hex (default: env or builtin)")
        by_name[name] = sp
        return sp

    sp = add("verify-lemmas", "Monte Carlo checks of the closed-form moment identities")
    sp.add_argument("--stein-samples", type=int, default=1_000_000)
    sp.add_argument("--rho-sq-samples", type=int, default=100_000)
    sp.add_argument("--delta1-samples", type=int, default=10_000)
    sp.add_argument("--out", help="output CSV path")

    sp = add("scan", "measure feature-update RMS over an (n, r) grid")
    sp.add_argument("--scheme", choices=[INIT_A, INIT_B, FFT])
    sp.add_argument("--gamma", type=float, default=0.0)
    sp.add_argument("--eta-rule", choices=["fixed", "mua"], default="mua")
    sp.add_argument("--eta-const", type=float, default=1.0,
                    help="eta0 for the fixed rule, the constant c for mua")
    sp.add_argument("--n", type=_int_list, help="comma-separated widths")
    sp.add_argument("--r", type=_int_list, help="comma-separated ranks")
    sp.add_argument("--steps", type=int, default=5)
    sp.add_argument("--n-seeds", type=int, default=8)
    sp.add_argument("--d-zbar-mode", choices=["fixed", "resampled"], default="fixed")
    sp.add_argument("--w-star-std", type=float, default=0.0)
    sp.add_argument("--out", help="output CSV path")

    sp = add("fit", "fit log2-log2 slopes of a scan CSV against theory")
    sp.add_argument("--input", help="scan CSV produced by the scan subcommand")
    sp.add_argument("--step", type=int, default=None,
                    help="which step to fit (default: last recorded)")
    sp.add_argument("--tol", type=float, default=0.15,
                    help="|slope - predicted| tolerance for the pass column")
    sp.add_argument("--out", help="output CSV path (default: print table)")

    sp = add("sweep-lr", "learning-rate sweep on the synthetic teacher-student task")
    sp.add_argument("--scheme", choices=[INIT_A, INIT_B])
    sp.add_argument("--gamma", type=float, default=0.0)
    sp.add_argument("--base", type=float, default=1.0,
                    help="multiplier base: alpha = base * r^-gamma")
    sp.add_argument("--n", type=int)
    sp.add_argument("--ranks", type=_int_list, help="comma-separated adapter ranks")
    sp.add_argument("--log2-eta-min", type=int)
    sp.add_argument("--log2-eta-max", type=int)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--n-seeds", type=int, default=4)
    sp.add_argument("--include-fft", action="store_true",
                    help="also sweep full finetuning of the same task")
    sp.add_argument("--out", help="output CSV path")
    sp.add_argument("--svg", help="optional SVG figure path")

    sp = add("prescribe", "transfer a tuned learning rate to another width/rank")
    sp.add_argument("--scheme", choices=[INIT_A, INIT_B, FFT])
    sp.add_argument("--gamma", type=float, default=0.0)
    sp.add_argument("--eta-ref", type=float)
    sp.add_argument("--n-ref", type=int)
    sp.add_argument("--r-ref", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--r", type=int)
    sp.add_argument("--to-fft", action="store_true",
                    help="prescribe for full finetuning instead of a new (n, r)")

    sp = add("report", "render an SVG figure from a sweep-lr CSV")
    sp.add_argument("--input", help="sweep-lr CSV")
    sp.add_argument("--svg", help="output SVG path")
    sp.add_argument("--title", default=None)

    return parser, by_name


def read_config(path: str) -> dict[str, str]:
    """Parse a flat key=value config file ('#' comments, blank lines ok)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        if key in values:
            raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _config_defaults(sub: _Parser, raw: dict[str, str], path: str) -> dict[str, object]:
    """Convert config strings to flag values; unknown keys are rejected."""
    actions = {}
    for action in sub._actions:
        if action.dest in ("help", "config"):
            continue
        actions[action.dest] = action
    converted: dict[str, object] = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            raise UsageError(f"{path}: unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if value not in ("true", "false"):
                raise UsageError(f"{path}: key {key!r} takes true or false, got {value!r}")
            converted[dest] = value == "true"
            continue
        try:
            converted[dest] = action.type(value) if action.type else value
        except (ValueError, argparse.ArgumentTypeError, LorascaleError) as exc:
            raise UsageError(f"{path}: bad value for {key!r}: {exc}") from exc
        if action.choices is not None and converted[dest] not in action.choices:
            raise UsageError(
                f"{path}: key {key!r} must be one of {sorted(map(str, action.choices))}"
            )
    return converted


def parse_config(argv: Sequence[str]) -> argparse.Namespace:
    """Resolve command + parameters from flags and the optional config file."""
    parser, by_name = _build_parser()
    first = parser.parse_args(list(argv))
    if getattr(first, "config", None):
        sub = by_name[first.command]
        sub.set_defaults(**_config_defaults(sub, read_config(first.config), first.config))
        return parser.parse_args(list(argv))
    return first


def _require(args: argparse.Namespace, names: Sequence[str]) -> None:
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise UsageError("missing required parameters: " + ", ".join("--" + n for n in missing))


def _resolve_seed(args: argparse.Namespace) -> tuple[Seed, str]:
    if args.seed is not None:
        return args.seed, "flag"
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return parse_seed(env), "env"
        except LorascaleError as exc:
            raise UsageError(f"bad {SEED_ENV_VAR} value {env!r}: {exc}") from exc
    return Seed(DEFAULT_SEED), "default"


def _manifest_params(args: argparse.Namespace, seed_source: str) -> dict[str, object]:
    skip = {"command", "config", "seed"}
    params = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    params["seed_source"] = seed_source
    return params


def _finish_outputs(
    command: str,
    args: argparse.Namespace,
    seed: Seed,
    seed_source: str,
    started: str,
    outputs: Sequence[str],
) -> None:
    from .reporting import RunManifest, write_manifest

    manifest = RunManifest(
        command=command,
        parameters=_manifest_params(args, seed_source),
        seed=seed.value,
        started_at=started,
        finished_at=_utc_now(),
    )
    for path in outputs:
        write_manifest(manifest, path)


def _cmd_verify_lemmas(args: argparse.Namespace) -> int:
    from .reporting import LEMMA_COLUMNS, RunManifest, config_id, emit_csv

    seed, seed_source = _resolve_seed(args)
    started = _utc_now()
    cid = config_id(_manifest_params(args, seed_source))
    rows: list[dict[str, object]] = []

    def add_row(lemma: str, params: str, mean: float, std_error: float,
                target: float, z_score: float, ok: bool) -> None:
        rows.append({
            "lemma": lemma, "params": params, "mean": mean,
            "std_error": std_error, "target": target, "z_score": z_score,
            "pass": ok, "seed": seed.value, "config_id": cid,
        })

    m = args.stein_samples
    for rho in (0.0, 0.25, 0.5, 0.9):
        est = stein_sign_product(rho, m, derive(seed, f"stein:rho={rho}"))
        add_row("sign_gaussian_product", f"rho={rho};samples={m}",
                est.mean, est.std_error, est.target, est.z_score,
                abs(est.z_score) <= 4.0)
    for sigma_g, rho in ((2.0, 0.3), (1.0, 1.0)):
        est = general_sign_product(1.0, sigma_g, rho, m,
                                   derive(seed, f"general:{sigma_g}:{rho}"))
        add_row("sign_gaussian_product_scaled",
                f"sigma_g={sigma_g};rho={rho};samples={m}",
                est.mean, est.std_error, est.target, est.z_score,
                abs(est.z_score) <= 4.0)
    for n in (16, 100):
        est = rho_sq_expectation(n, args.rho_sq_samples, derive(seed, f"rhosq:n={n}"))
        add_row("alignment_coefficient_sq", f"n={n};samples={args.rho_sq_samples}",
                est.mean, est.std_error, est.target, est.z_score,
                abs(est.z_score) <= 4.0)
        gap = rho_sq_symmetry_gap(n, 1000, derive(seed, f"rhosq-sym:n={n}"))
        add_row("alignment_coefficient_sym", f"n={n};samples=1000",
                gap, 0.0, 0.0, 0.0, gap == 0.0)
    for n, r in ((256, 16), (1024, 64)):
        est = delta1_second_moment(n, r, 1.0, args.delta1_samples,
                                   derive(seed, f"delta1:n={n}:r={r}"))
        rel = abs(est.mean - est.target) / est.target
        add_row("delta1_second_moment", f"n={n};r={r};beta=1;samples={args.delta1_samples}",
                est.mean, est.std_error, est.target, est.z_score, rel <= 0.05)

    for row in rows:
        status = "PASS" if row["pass"] else "FAIL"
        print(f"{status}  {row['lemma']:<32} {row['params']:<40} "
              f"mean={row['mean']:+.6f} target={row['target']:+.6f}")
    if args.out:
        emit_csv(rows, args.out, LEMMA_COLUMNS)
        _finish_outputs("verify-lemmas", args, seed, seed_source, started, [args.out])
        print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_DOMAIN


def _cmd_scan(args: argparse.Namespace) -> int:
    from .reporting import SCAN_COLUMNS, config_id, emit_csv, scan_rows

    _require(args, ["scheme", "n", "r", "out"])
    seed, seed_source = _resolve_seed(args)
    started = _utc_now()
    rule = EtaRule(kind=args.eta_rule, value=args.eta_const)
    config = ScalingConfig(
        scheme=args.scheme, gamma=args.gamma, eta_rule=rule, steps=args.steps,
        d_zbar_mode=args.d_zbar_mode, w_star_std=args.w_star_std,
    )
    results = run_grid(config, args.n, args.r, args.n_seeds, derive(seed, "scan"))
    cid = config_id(_manifest_params(args, seed_source))
    rows = scan_rows(results, args.scheme, args.gamma, rule.label(),
                     args.n_seeds, seed.value, cid)
    emit_csv(rows, args.out, SCAN_COLUMNS)
    _finish_outputs("scan", args, seed, seed_source, started, [args.out])
    print(f"wrote {len(rows)} rows ({len(results)} cells) to {args.out}")
    return EXIT_OK


def _infer_regime(scheme: str, gamma: float, pairs: set[tuple[int, int]]) -> str | None:
    if not (scheme == INIT_B and gamma == 1.0):
        return None
    small = {p for p in pairs if p[1] * p[1] <= p[0]}
    if small == pairs:
        return R_SMALL
    if not small:
        return R_LARGE
    raise DomainError(
        "scan mixes r <= sqrt(n) and r > sqrt(n) cells; fit each regime separately"
    )


def _cmd_fit(args: argparse.Namespace) -> int:
    from .reporting import FIT_COLUMNS, config_id, emit_csv, read_csv

    _require(args, ["input"])
    started = _utc_now()
    _, raw = read_csv(args.input)
    if not raw:
        raise DomainError(f"no data rows in {args.input}")
    schemes = {r["scheme"] for r in raw}
    gammas = {r["gamma"] for r in raw}
    rules = {r["eta_rule"] for r in raw}
    seeds = {r["seed"] for r in raw}
    if len(schemes) != 1 or len(gammas) != 1 or len(rules) != 1:
        raise DomainError("fit expects a single-config scan CSV")
    scheme, gamma, rule = schemes.pop(), float(gammas.pop()), rules.pop()

    ns = sorted({int(r["n"]) for r in raw})
    rs = sorted({int(r["r"]) for r in raw})
    if len(ns) >= 3 and len(rs) == 1:
        axis, axis_col = "n", "n"
    elif len(rs) >= 3 and len(ns) == 1:
        axis, axis_col = "r", "r"
    else:
        raise DomainError(
            f"need >= 3 values on exactly one axis, got n={ns} r={rs}"
        )

    predicted = None
    if rule.startswith("mua:"):
        regime = _infer_regime(scheme, gamma, {(int(r["n"]), int(r["r"])) for r in raw})
        predicted = theory_exponents(scheme, gamma, regime)

    quantities = sorted({r["quantity"] for r in raw})
    cid = config_id({"fit_of": raw[0]["config_id"], "step": args.step, "tol": args.tol})
    seed_val: object = int(seeds.pop()) if len(seeds) == 1 else "mixed"
    out_rows: list[dict[str, object]] = []
    for quantity in quantities:
        q_rows = [r for r in raw if r["quantity"] == quantity]
        step = args.step if args.step is not None else max(int(r["step"]) for r in q_rows)
        pts = [(float(r[axis_col]), float(r["rms"])) for r in q_rows if int(r["step"]) == step]
        fit = fit_exponent(pts)
        pred_slope: object = ""
        ok: object = ""
        if predicted is not None:
            lookup = "delta_zb" if quantity in ("z_b", "delta_w_zin") else quantity
            exps = predicted.for_quantity(lookup)
            pred_slope = exps.n_exp if axis == "n" else exps.r_exp
            ok = abs(fit.slope - pred_slope) <= args.tol
        out_rows.append({
            "quantity": quantity, "axis": axis, "slope": fit.slope,
            "intercept": fit.intercept, "r_squared": fit.r_squared,
            "predicted_slope": pred_slope, "pass": ok,
            "seed": seed_val,
            "config_id": cid,
        })

    for row in out_rows:
        pred = row["predicted_slope"]
        tail = "" if pred == "" else f"  predicted={pred:+.3f}  {'PASS' if row['pass'] else 'FAIL'}"
        print(f"{row['quantity']:<14} vs {row['axis']}: slope={row['slope']:+.4f} "
              f"r2={row['r_squared']:.4f}{tail}")
    if args.out:
        seed0, seed_source = _resolve_seed(args)
        emit_csv(out_rows, args.out, FIT_COLUMNS)
        _finish_outputs("fit", args, seed0, seed_source, started, [args.out])
        print(f"wrote {len(out_rows)} rows to {args.out}")
    return EXIT_OK


def _cmd_sweep_lr(args: argparse.Namespace) -> int:
    from .reporting import (
        SWEEP_COLUMNS, config_id, emit_csv, emit_sweep_plot, sweep_rows,
    )

    _require(args, ["scheme", "n", "ranks", "log2-eta-min", "log2-eta-max", "out"])
    seed, seed_source = _resolve_seed(args)
    started = _utc_now()
    task = make_task(args.n, derive(seed, f"task:n={args.n}"))
    table = sweep(
        task, args.scheme, args.gamma, args.ranks,
        (args.log2_eta_min, args.log2_eta_max), args.steps, args.n_seeds,
        derive(seed, "sweep"), include_fft=args.include_fft, base=args.base,
    )
    cid = config_id(_manifest_params(args, seed_source))
    rows = sweep_rows(table, args.scheme, args.gamma, seed.value, cid)
    emit_csv(rows, args.out, SWEEP_COLUMNS)
    outputs = [args.out]
    if args.svg:
        emit_sweep_plot(table, args.svg,
                        title=f"{args.scheme} gamma={args.gamma:g} n={args.n}")
        outputs.append(args.svg)
    _finish_outputs("sweep-lr", args, seed, seed_source, started, outputs)
    for key in table.keys:
        try:
            best = select_best_lr(table, key)
            label = "fft" if key == FFT else f"r={key}"
            print(f"best log2(eta) {label:>6}: {best}")
        except LorascaleError:
            print(f"best log2(eta) {key}: none (all diverged)")
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def _cmd_prescribe(args: argparse.Namespace) -> int:
    _require(args, ["scheme", "eta-ref", "n-ref", "r-ref", "n"])
    if not args.to_fft:
        _require(args, ["r"])
        p = transfer_lr(args.eta_ref, args.n_ref, args.r_ref,
                        args.n, args.r, args.scheme, args.gamma)
        target = f"n={args.n}, r={args.r}"
    else:
        p = transfer_to_fft(args.eta_ref, args.n_ref, args.n, args.scheme, args.gamma)
        target = f"full finetuning at n={args.n}"
    print(f"prescribed eta for {target}: {p.eta:.17g}")
    print(f"rule: {p.rule}  exponents (a_n, a_r) = ({p.exponents_used[0]:+g}, "
          f"{p.exponents_used[1]:+g})" + (f"  regime: {p.regime}" if p.regime else ""))
    print("note: exponents set the scaling; the tuned constant is assumed to "
          "carry over from the reference run.")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    from .reporting import config_id, emit_sweep_plot, read_csv

    _require(args, ["input", "svg"])
    seed, seed_source = _resolve_seed(args)
    started = _utc_now()
    _, raw = read_csv(args.input)
    if not raw:
        raise DomainError(f"no data rows in {args.input}")

    def to_key(text: str) -> object:
        return text if text == FFT else int(text)

    cells: dict[tuple[object, int], list[dict[str, str]]] = {}
    for r in raw:
        cells.setdefault((to_key(r["rank_or_fft"]), int(r["log2_eta"])), []).append(r)
    entries = {}
    for cell_key, cell_rows in cells.items():
        diverged = any(r["diverged"] == "true" for r in cell_rows)
        losses = [float(r["final_train_loss_ema"]) for r in cell_rows]
        mean = float("nan") if diverged else sum(losses) / len(losses)
        entries[cell_key] = SweepEntry(loss_ema=mean, diverged=diverged)
    keys = sorted({k for k, _ in entries},
                  key=lambda k: (1, 0) if k == FFT else (0, k))
    log2_etas = tuple(sorted({lg for _, lg in entries}))
    table = SweepTable(keys=tuple(keys), log2_etas=log2_etas, entries=entries)
    emit_sweep_plot(table, args.svg, title=args.title)
    _finish_outputs("report", args, seed, seed_source, started, [args.svg])
    print(f"wrote figure to {args.svg}")
    return EXIT_OK


_COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "verify-lemmas": _cmd_verify_lemmas,
    "scan": _cmd_scan,
    "fit": _cmd_fit,
    "sweep-lr": _cmd_sweep_lr,
    "prescribe": _cmd_prescribe,
    "report": _cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_config(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IoError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LorascaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line driver emitting plot-ready datasets.

Every command writes a single artifact (CSV or JSON) whose header embeds the
fully resolved configuration, so re-running the printed config reproduces the
file byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Iterable, Sequence, TextIO

import numpy as np

from .conditional import conditional_witness_map
from .errors import NumericalError
from .gaussian import Basis, EllipseSummary, basis_change, ellipse_summary
from .model import SystemParams, mode_spectrum, stability_boundary
from .transient import (
    TransientConfig,
    evolve,
    negativity_map,
    optimal_negativity,
    wiener_sigma0_policy,
    witness_series,
)
from .verify import VerifyConfig, verify_experiment

_TWO_PI = 2.0 * math.pi


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if math.isnan(x):
        return "nan"
    return format(x, ".12g")


def _config_dict(args: argparse.Namespace) -> dict:
    # out and threads are execution details: the data content is the same
    # for any destination and any worker count, so the echoed config only
    # carries keys that determine the numbers
    skip = {"func", "config", "out", "threads"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


def _write_table(
    handle: TextIO,
    command: str,
    args: argparse.Namespace,
    columns: Sequence[str],
    rows: Iterable[Sequence],
    extra_meta: dict | None = None,
) -> None:
    handle.write(f"# loopmech {command}\n")
    handle.write(
        "# config = " + json.dumps(_config_dict(args), sort_keys=True) + "\n"
    )
    for key, value in (extra_meta or {}).items():
        handle.write(f"# {key} = {value}\n")
    handle.write(",".join(columns) + "\n")
    for row in rows:
        handle.write(",".join(_fmt(v) for v in row) + "\n")


class _Output:
    """Write to --out if given, else stdout; UTF-8 either way."""

    def __init__(self, path: str | None):
        self.path = path
        self._handle: TextIO | None = None

    def __enter__(self) -> TextIO:
        if self.path is None or self.path == "-":
            self._handle = None
            return sys.stdout
        self._handle = open(self.path, "w", encoding="utf-8", newline="\n")
        return self._handle

    def __exit__(self, *exc) -> None:
        if self._handle is not None:
            self._handle.close()


def _theta_grid(args: argparse.Namespace) -> np.ndarray:
    return np.linspace(args.theta_min, args.theta_max, args.theta_points, endpoint=False)


def _gammaq_grid(args: argparse.Namespace) -> np.ndarray:
    if args.gammaq_min <= 0.0:
        raise ValueError("gammaq-min must be positive")
    if args.gammaq_max < args.gammaq_min:
        raise ValueError("gammaq-max must not be below gammaq-min")
    return np.linspace(args.gammaq_min, args.gammaq_max, args.gammaq_points)


def _ellipse_dict(ell: EllipseSummary) -> dict:
    return {
        "semi_axes": [ell.semi_axes[0], ell.semi_axes[1]],
        "orientation": ell.orientation,
        "squeezing_db": ell.squeezing_db,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_spectrum(args: argparse.Namespace) -> int:
    thetas = _theta_grid(args)
    rows = []
    for th in thetas:
        params = SystemParams(gamma_q=args.gammaq, eta=args.eta, theta=float(th))
        s = mode_spectrum(params)
        rows.append(
            (
                th,
                s.omega_plus_sq,
                s.omega_minus_sq,
                s.gamma_plus,
                s.gamma_minus,
                s.stable,
            )
        )
    with _Output(args.out) as handle:
        _write_table(
            handle,
            "spectrum",
            args,
            (
                "theta",
                "omega_plus_sq",
                "omega_minus_sq",
                "gamma_plus",
                "gamma_minus",
                "stable",
            ),
            rows,
        )
    return 0


def cmd_transient(args: argparse.Namespace) -> int:
    gammas = args.gammaq
    grid = TransientConfig(t_max=args.t_max, n_points=args.n_points).grid()
    rows = []
    ellipses = []
    for g in gammas:
        params = SystemParams(gamma_q=g, eta=args.eta, theta=args.theta)
        sigma0 = wiener_sigma0_policy(params)
        series = witness_series(sigma0, params, grid)
        for t, nu, en in zip(series.times, series.nu_min, series.log_negativity):
            rows.append((g, t, nu, en))
        best = optimal_negativity(sigma0, params)
        joint0 = basis_change(sigma0) if sigma0.basis is Basis.SINGLE_PARTICLE else sigma0
        at_best = evolve(sigma0, params, best.t_star)
        ellipses.append(
            {
                "gammaq": g,
                "t_star": best.t_star,
                "nu_min": best.nu_min,
                "log_negativity": best.log_negativity,
                "t0": {
                    "plus": _ellipse_dict(ellipse_summary(joint0.block(0))),
                    "minus": _ellipse_dict(ellipse_summary(joint0.block(1))),
                },
                "t_star_state": {
                    "plus": _ellipse_dict(ellipse_summary(at_best.block(0))),
                    "minus": _ellipse_dict(ellipse_summary(at_best.block(1))),
                },
            }
        )
    ellipse_json = json.dumps(ellipses, sort_keys=True)
    if args.ellipses_out:
        with open(args.ellipses_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(ellipse_json + "\n")
        meta = {"ellipses_file": args.ellipses_out}
    else:
        meta = {"ellipses": ellipse_json}
    with _Output(args.out) as handle:
        _write_table(
            handle,
            "transient",
            args,
            ("gammaq", "t", "nu_min", "log_negativity"),
            rows,
            extra_meta=meta,
        )
    return 0


def cmd_negativity_map(args: argparse.Namespace) -> int:
    thetas = _theta_grid(args)
    gammas = _gammaq_grid(args)
    params = SystemParams(gamma_q=gammas[0], eta=args.eta, theta=0.0)
    result = negativity_map(params, thetas, gammas, workers=args.threads)
    rows = []
    for i, th in enumerate(thetas):
        for j, g in enumerate(gammas):
            rows.append(
                (
                    th,
                    g,
                    result.log_negativity[i, j],
                    result.t_star[i, j],
                    result.stable[i, j],
                )
            )
    with _Output(args.out) as handle:
        _write_table(
            handle,
            "negativity-map",
            args,
            ("theta", "gammaq", "log_negativity", "t_star", "stable"),
            rows,
        )
    return 0


def cmd_conditional_map(args: argparse.Namespace) -> int:
    eta = args.eta_c * (1.0 - args.eta_m)
    params = SystemParams(
        gamma_q=1.0,
        eta=eta,
        theta=0.0,
        eta_c=args.eta_c,
        eta_m=args.eta_m,
    )
    thetas = _theta_grid(args)
    gammas = _gammaq_grid(args)
    result = conditional_witness_map(params, thetas, gammas)
    rows = []
    for i, th in enumerate(thetas):
        for j, g in enumerate(gammas):
            rows.append(
                (
                    th,
                    g,
                    result.nu_min[i, j],
                    result.log_negativity[i, j],
                    result.stable[i, j],
                )
            )
    with _Output(args.out) as handle:
        _write_table(
            handle,
            "conditional-map",
            args,
            ("theta", "gammaq", "nu_min", "log_negativity", "stable"),
            rows,
            extra_meta={"eta": _fmt(eta)},
        )
    return 0


def cmd_stability(args: argparse.Namespace) -> int:
    gammas = _gammaq_grid(args)
    rows = []
    for g in gammas:
        try:
            band = stability_boundary(SystemParams(gamma_q=g, eta=args.eta, theta=0.0))
        except ValueError:
            band = None
        if band is None:
            rows.append((g, math.nan, math.nan, False))
        else:
            rows.append((g, band.theta_minus, band.theta_plus, True))
    with _Output(args.out) as handle:
        _write_table(
            handle,
            "stability",
            args,
            ("gammaq", "theta_minus", "theta_plus", "has_band"),
            rows,
        )
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    params = SystemParams(
        gamma_q=args.gammaq,
        eta=args.eta,
        theta=args.theta,
        eta_c=args.eta_c,
        eta_m=0.0,
    )
    config = VerifyConfig(
        n_trajectories=args.n_traj,
        dt=args.dt,
        t_max=args.t_max,
        report_t_max=args.report_t_max,
        n_report=args.n_report,
        seed=args.seed,
        n_resamples=args.n_resamples,
        threads=args.threads,
    )
    report = verify_experiment(params, config)
    with _Output(args.out) as handle:
        handle.write(report.to_json() + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument(
        "--threads",
        type=int,
        default=os.cpu_count() or 1,
        help="worker threads (results do not depend on this)",
    )
    parser.add_argument("--out", default=None, help="output path (default stdout)")
    parser.add_argument(
        "--config",
        default=None,
        help="JSON file whose keys override the flags above",
    )


def _add_theta_grid(parser: argparse.ArgumentParser, points: int) -> None:
    parser.add_argument("--theta-min", type=float, default=0.0)
    parser.add_argument("--theta-max", type=float, default=_TWO_PI)
    parser.add_argument("--theta-points", type=int, default=points)


def _add_gammaq_grid(parser: argparse.ArgumentParser, points: int) -> None:
    parser.add_argument("--gammaq-min", type=float, default=0.05)
    parser.add_argument("--gammaq-max", type=float, default=4.0)
    parser.add_argument("--gammaq-points", type=int, default=points)


def _gammaq_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopmech",
        description="Datasets for the loop-coupled two-particle system "
        "(all frequencies in units of omega0).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="normal-mode frequencies over theta")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--gammaq", type=float, default=1.0)
    _add_theta_grid(p, 360)
    _add_common(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("transient", help="witness vs time after closing the loop")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--theta", type=float, default=2.0 * math.pi / 3.0)
    p.add_argument(
        "--gammaq",
        type=_gammaq_list,
        default=[0.5, 1.0, 2.0],
        help="comma-separated recoil rates",
    )
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--n-points", type=int, default=601)
    p.add_argument("--ellipses-out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_transient)

    p = sub.add_parser("negativity-map", help="optimal transient negativity map")
    p.add_argument("--eta", type=float, default=0.5)
    _add_theta_grid(p, 100)
    _add_gammaq_grid(p, 100)
    _add_common(p)
    p.set_defaults(func=cmd_negativity_map)

    p = sub.add_parser("conditional-map", help="steady conditional witness map")
    p.add_argument("--eta-c", type=float, default=0.5)
    p.add_argument("--eta-m", type=float, default=0.8)
    _add_theta_grid(p, 100)
    _add_gammaq_grid(p, 100)
    _add_common(p)
    p.set_defaults(func=cmd_conditional_map)

    p = sub.add_parser("stability", help="instability phase band vs gammaq")
    p.add_argument("--eta", type=float, default=0.5)
    _add_gammaq_grid(p, 200)
    _add_common(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("verify", help="retrodiction certification report")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--theta", type=float, default=2.0 * math.pi / 3.0)
    p.add_argument("--gammaq", type=float, default=2.0)
    p.add_argument("--eta-c", type=float, default=0.5)
    p.add_argument("--n-traj", type=int, default=1000)
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--t-max", type=float, default=8.0)
    p.add_argument("--report-t-max", type=float, default=1.0)
    p.add_argument("--n-report", type=int, default=21)
    p.add_argument("--n-resamples", type=int, default=1000)
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    return parser


def _apply_config_file(args: argparse.Namespace) -> None:
    if not args.config:
        return
    with open(args.config, encoding="utf-8") as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise ValueError("config file must hold a JSON object")
    known = set(vars(args)) - {"func", "config", "command"}
    for key, value in overrides.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ValueError(f"unknown config key: {key}")
        setattr(args, name, value)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config_file(args)
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: config parsing/merging, campaign dispatch, CSV
(and figure) emission.

Precedence: command-line flags > config file (TOML or JSON) > defaults.
All dBm quantities are converted to linear scale exactly once, inside
PowerConfig, at config build time.  Every CSV starts with a comment line
recording the artifact version and the fully resolved config, so an output
file is self-describing and reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, experiments, theory
from .cpt import CptParams
from .deployment import PowerConfig, generate_deployment, nominal_harmonic_snr
from .experiments import Campaign, CampaignResult

__all__ = ["Config", "ConfigError", "dispatch", "main", "parse_and_merge"]

SUBCOMMANDS = ("deploy", "simulate", "theory", "sweep", "reproduce", "validate")
REPRODUCE_TARGETS = ("table3", "fig3", "fig4", "fig5", "fig6", "fig7")


class ConfigError(ValueError):
    """Invalid or unknown configuration input; message names the key."""


@dataclass(frozen=True)
class Config:
    """Resolved run configuration (defaults = the reference scenario)."""

    Q: int = 1000
    K: int = 5
    r_in: float = 0.025
    r_out: float = 0.5
    p: float = 30.0          # dBm
    p_bar: float = -110.0    # dBm
    sigma2: float = -120.0   # dBm
    N: int = 6
    N1: int = 2
    xi: float = 0.01
    trials: int | None = None   # per-command default if unset
    seed: int = 0
    mechanisms: tuple[str, ...] = ("ucpt", "acptf", "acptd")

    def power(self) -> PowerConfig:
        return PowerConfig(p=self.p, p_bar=self.p_bar, sigma2=self.sigma2)

    def cpt_params(self) -> CptParams:
        return CptParams(N=self.N, N1=self.N1, xi=self.xi, power=self.power())

    def describe(self) -> str:
        parts = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            parts.append(f"{f.name}={v}")
        return " ".join(parts)


_INT_KEYS = {"Q", "K", "N", "N1", "trials", "seed"}
_FLOAT_KEYS = {"r_in", "r_out", "p", "p_bar", "sigma2", "xi"}
_CONFIG_KEYS = {f.name for f in dataclasses.fields(Config)}


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or (isinstance(value, float)
                                           and value != int(value)):
                raise ValueError
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "mechanisms":
            if isinstance(value, str):
                value = [m.strip() for m in value.split(",") if m.strip()]
            return tuple(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} has invalid value {value!r}") from None
    raise ConfigError(f"unknown config key {key!r}")


def _load_config_file(path: str) -> dict:
    try:
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:   # Python < 3.11
                import tomli as tomllib
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc


def _validate(cfg: Config) -> Config:
    if cfg.Q < 1:
        raise ConfigError("Q must be >= 1")
    if not 0 <= cfg.K <= cfg.Q:
        raise ConfigError("K must satisfy 0 <= K <= Q")
    if not 0.0 < cfg.r_in < cfg.r_out:
        raise ConfigError("r_in must satisfy 0 < r_in < r_out")
    if cfg.trials is not None and cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    bad = [m for m in cfg.mechanisms if m not in ("ucpt", "acptf", "acptd")]
    if bad or not cfg.mechanisms:
        raise ConfigError(f"mechanisms must be a non-empty subset of ucpt,acptf,acptd"
                          f" (got {bad or 'nothing'})")
    try:
        cfg.cpt_params()   # N/N1/xi/power invariants, with their own messages
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_and_merge(config_file: str | None = None,
                    flags: dict | None = None) -> Config:
    """Merge defaults, an optional TOML/JSON config file, and flag overrides
    (in increasing precedence) into a validated Config."""
    merged: dict = {}
    if config_file:
        for key, value in _load_config_file(config_file).items():
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r} in {config_file}")
            merged[key] = _coerce(key, value)
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = _coerce(key, value)
    return _validate(Config(**merged))


# ----------------------------------------------------------------------------
# CSV / figure emission
# ----------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _write_csv(path: str, config: Config, header: list[str], rows: list) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# cptdet {__version__}; config: {config.describe()}\r\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def _png_path(out: str) -> str:
    return out[:-4] + ".png" if out.endswith(".csv") else out + ".png"


def _plot_lines(path: str, series: dict, xlabel: str, ylabel: str,
                logx: bool = False) -> None:
    """series: label -> (x array, y array)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o", markersize=3.5, label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_pmf(path: str, empirical: dict, theoretical: dict) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    colors = {}
    for mech, pmf in empirical.items():
        ks = sorted(pmf)
        line, = ax.plot(ks, [pmf[k] for k in ks], "o", markersize=4,
                        label=f"{mech} (simulated)")
        colors[mech] = line.get_color()
    for mech, pmf in theoretical.items():
        ks = sorted(pmf)
        ax.plot(ks, [pmf[k] for k in ks], "-", color=colors.get(mech),
                label=f"{mech} (theory)")
    ax.set_xlabel("detected activity level")
    ax.set_ylabel("probability")
    ax.set_xlim(-0.5, 15.5)
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ----------------------------------------------------------------------------
# result -> row helpers
# ----------------------------------------------------------------------------

def _pmf_rows(result: CampaignResult) -> list:
    point = result.points[0]
    theory_pmf = point.detail.get("theory_pmf", {})
    rows = []
    for cell in point.cells:
        overlay = theory_pmf.get(cell.mechanism, {}) if cell.rounding == "ni" else {}
        ks = sorted(set(cell.pmf) | set(overlay))
        for k in ks:
            rows.append([cell.mechanism, cell.rounding, k,
                         cell.pmf.get(k, 0.0), overlay.get(k)])
    return rows


def _sweep_rows(result: CampaignResult, extra_front: list | None = None) -> list:
    rows = []
    for point in result.points:
        split = point.detail.get("split", {})
        for cell in point.cells:
            row = list(extra_front or [])
            row += [point.variable, point.value, cell.mechanism, cell.rounding,
                    cell.success, cell.stderr, cell.theory_success]
            sp = split.get(f"{cell.mechanism}:{cell.rounding}")
            if split:
                row += [sp[0] if sp else None, sp[1] if sp else None]
            rows.append(row)
    return rows


def _campaign(cfg: Config, trials_default: int, **overrides) -> Campaign:
    return Campaign(
        mechanisms=overrides.pop("mechanisms", cfg.mechanisms),
        trials=cfg.trials if cfg.trials is not None else trials_default,
        Q=cfg.Q, K=overrides.pop("K", cfg.K),
        params=overrides.pop("params", cfg.cpt_params()),
        r_in=cfg.r_in, r_out=cfg.r_out,
        master_seed=overrides.pop("master_seed", cfg.seed),
        **overrides)


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def _cmd_deploy(cfg: Config, out: str) -> int:
    dep = generate_deployment(cfg.Q, cfg.r_in, cfg.r_out, cfg.power(), cfg.seed)
    dep.to_json(out)
    print(f"wrote deployment of Q={cfg.Q} devices to {out} "
          f"(harmonic-mean DL SNR {dep.gamma_bar_prime:.1f})")
    return 0


def _cmd_simulate(cfg: Config, out: str, n_workers: int | None) -> int:
    result = experiments.run_pmf(_campaign(cfg, 20_000), n_workers)
    _write_csv(out, cfg, ["mechanism", "rounding", "k", "probability", "theory"],
               _pmf_rows(result))
    for cell in result.points[0].cells:
        print(f"{cell.mechanism:6s} {cell.rounding:3s} success at K={cfg.K}: "
              f"{cell.success:.4f} +/- {cell.stderr:.4f}")
    print(f"wrote {out} ({result.wall_clock_s:.1f}s)")
    return 0


def _cmd_theory(cfg: Config, out: str, mechanism: str | None) -> int:
    mechanisms = (mechanism,) if mechanism else cfg.mechanisms
    params = cfg.cpt_params()
    stats = theory.DetectionStats(
        N1=params.N1, N2=params.N2,
        gamma_bar_prime=nominal_harmonic_snr(cfg.r_in, cfg.r_out, params.power),
        gamma_bar_c=params.power.gamma_bar)
    rows = []
    kmax = min(cfg.Q, cfg.K + 15)
    ks = np.arange(kmax + 1)
    for mech in mechanisms:
        if mech == "ucpt":
            model = theory.ucpt_model(cfg.K, params.N, params.power.gamma_bar)
        elif mech == "acptf":
            model = theory.acptf_gaussian_model(
                cfg.K, stats.N1, stats.N2, stats.gamma_bar_prime, stats.gamma_bar_c)
        else:
            model = theory.acptd_model(
                cfg.K, theory.acptd_map_config(params.xi, stats.gamma_bar_c), stats)
        upper = np.asarray(model.cdf(ks + 0.5))
        lower = np.asarray(model.cdf(ks - 0.5))
        pmf = upper - lower
        pmf[0] = upper[0]
        if kmax == cfg.Q:
            pmf[-1] = 1.0 - lower[-1]
        for k in ks:
            rows.append([mech, int(k), float(pmf[k])])
    _write_csv(out, cfg, ["mechanism", "k_hat", "pmf_theory"], rows)
    print(f"wrote {out}")
    return 0


_SWEEP_DEFAULT_GRIDS = {
    "K": tuple(range(1, 26)),
    "xi": tuple(np.geomspace(1e-4, 0.5, 22)),
    "N1": None,   # depends on N
    "N": tuple(range(4, 13)),
}


def _sweep_campaign(cfg: Config, variable: str, grid, trials_default: int,
                    **overrides) -> Campaign:
    if grid is None:
        grid = (_SWEEP_DEFAULT_GRIDS[variable] if variable != "N1"
                else tuple(range(1, cfg.N)))
    return _campaign(cfg, trials_default, sweep_variable=variable,
                     sweep_grid=tuple(grid), **overrides)


def _cmd_sweep(cfg: Config, out: str, variable: str, grid,
               n_workers: int | None) -> int:
    mechanisms = ("acptd",) if variable == "xi" else cfg.mechanisms
    campaign = _sweep_campaign(cfg, variable, grid, 20_000, mechanisms=mechanisms)
    result = experiments.run_sweep(campaign, n_workers)
    header = ["variable", "value", "mechanism", "rounding", "success", "stderr",
              "theory"]
    if variable == "N":
        header += ["best_N1", "best_N2"]
    _write_csv(out, cfg, header, _sweep_rows(result))
    print(f"wrote {out} ({result.wall_clock_s:.1f}s)")
    return 0


def _cmd_validate(cfg: Config, out: str) -> int:
    report = experiments.run_validation_suite(cfg.seed)
    rows = [[c.name, "pass" if c.passed else "FAIL", c.detail]
            for c in report.checks]
    _write_csv(out, cfg, ["check", "status", "detail"], rows)
    for c in report.checks:
        print(f"{'pass' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    if report.failures:
        print(f"{report.failures} validation check(s) failed", file=sys.stderr)
        return 1
    print("all validation checks passed")
    return 0


def _cmd_reproduce(cfg: Config, out: str, target: str,
                   n_workers: int | None) -> int:
    if target == "table3":
        result = experiments.run_table3(_campaign(cfg, 200_000), n_workers)
        rows = [[c.mechanism, c.rounding, c.success, c.stderr,
                 result.campaign.trials]
                for c in result.points[0].cells]
        _write_csv(out, cfg, ["mechanism", "rounding", "success", "stderr",
                              "trials"], rows)
        for r in rows:
            print(f"{r[0]:6s} {r[1]:8s} {100 * r[2]:6.2f}% +/- {100 * r[3]:.2f}pp")
        print(f"wrote {out} ({result.wall_clock_s:.1f}s)")
        return 0

    if target == "fig3":
        result = experiments.run_pmf(_campaign(cfg, 200_000), n_workers)
        _write_csv(out, cfg, ["mechanism", "rounding", "k", "probability",
                              "theory"], _pmf_rows(result))
        point = result.points[0]
        empirical = {c.mechanism: c.pmf for c in point.cells if c.rounding == "ni"}
        _plot_pmf(_png_path(out), empirical, point.detail.get("theory_pmf", {}))

    elif target == "fig4":
        campaign = _sweep_campaign(cfg, "K", None, 20_000)
        result = experiments.run_sweep(campaign, n_workers)
        _write_csv(out, cfg, ["variable", "value", "mechanism", "rounding",
                              "success", "stderr", "theory"], _sweep_rows(result))
        series = {}
        for mech in campaign.mechanisms:
            for rounding in campaign.roundings:
                xs = [p.value for p in result.points]
                ys = [p.cell(mech, rounding).success for p in result.points]
                series[f"{mech} {rounding.upper()}"] = (xs, ys)
        _plot_lines(_png_path(out), series, "active devices K",
                    "detection success probability")

    elif target == "fig5":
        rows = []
        series = {}
        for K in (2, 6, 12):
            seed = int(np.random.SeedSequence([cfg.seed, K]).generate_state(1)[0])
            campaign = _sweep_campaign(cfg, "xi", None, 20_000, K=K,
                                       mechanisms=("acptd",), master_seed=seed)
            result = experiments.run_sweep(campaign, n_workers)
            rows += _sweep_rows(result, extra_front=[K])
            xs = [p.value for p in result.points]
            ys = [p.cell("acptd", "ni").success for p in result.points]
            series[f"K={K}"] = (xs, ys)
        _write_csv(out, cfg, ["K", "variable", "value", "mechanism", "rounding",
                              "success", "stderr", "theory"], rows)
        _plot_lines(_png_path(out), series, "silencing probability",
                    "detection success probability", logx=True)

    elif target == "fig6":
        campaign = _sweep_campaign(cfg, "N1", None, 20_000)
        result = experiments.run_sweep(campaign, n_workers)
        _write_csv(out, cfg, ["variable", "value", "mechanism", "rounding",
                              "success", "stderr", "theory"], _sweep_rows(result))
        series = {}
        for mech in campaign.mechanisms:
            if mech == "ucpt":
                continue   # no downlink phase: constant in N1
            for rounding in campaign.roundings:
                xs = [p.value for p in result.points]
                ys = [p.cell(mech, rounding).success for p in result.points]
                series[f"{mech} {rounding.upper()}"] = (xs, ys)
        _plot_lines(_png_path(out), series, "downlink pilot symbols N1",
                    "detection success probability")

    elif target == "fig7":
        campaign = _sweep_campaign(cfg, "N", None, 10_000)
        result = experiments.run_sweep(campaign, n_workers)
        _write_csv(out, cfg, ["variable", "value", "mechanism", "rounding",
                              "success", "stderr", "theory", "best_N1",
                              "best_N2"], _sweep_rows(result))
        series = {}
        for mech in campaign.mechanisms:
            for rounding in campaign.roundings:
                xs = [p.value for p in result.points]
                ys = [p.cell(mech, rounding).success for p in result.points]
                series[f"{mech} {rounding.upper()}"] = (xs, ys)
        _plot_lines(_png_path(out), series, "pilot symbols N (best N1/N2 split)",
                    "detection success probability")
    else:
        raise ConfigError(f"unknown reproduce target {target!r}")

    print(f"wrote {out} and {_png_path(out)}")
    return 0


def dispatch(subcommand: str, config: Config, *, out: str | None = None,
             target: str | None = None, variable: str | None = None,
             grid=None, mechanism: str | None = None,
             n_workers: int | None = None) -> int:
    """Run one subcommand; returns the process exit status."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    if subcommand == "deploy":
        return _cmd_deploy(config, out or "deployment.json")
    if subcommand == "simulate":
        return _cmd_simulate(config, out or "simulate.csv", n_workers)
    if subcommand == "theory":
        if mechanism is not None and mechanism not in ("ucpt", "acptf", "acptd"):
            raise ConfigError(f"unknown mechanism {mechanism!r}")
        return _cmd_theory(config, out or "theory.csv", mechanism)
    if subcommand == "sweep":
        if variable not in experiments.SWEEP_VARIABLES:
            raise ConfigError(
                f"sweep variable must be one of {experiments.SWEEP_VARIABLES}")
        return _cmd_sweep(config, out or f"sweep_{variable}.csv", variable,
                          grid, n_workers)
    if subcommand == "reproduce":
        if target not in REPRODUCE_TARGETS:
            raise ConfigError(f"reproduce target must be one of {REPRODUCE_TARGETS}")
        return _cmd_reproduce(config, out or f"{target}.csv", target, n_workers)
    return _cmd_validate(config, out or "validate.csv")


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    # Shared flags live on a parent parser so they are accepted both before
    # and after the subcommand name.  SUPPRESS keeps unspecified options out
    # of the namespace entirely; otherwise the subparser pass would overwrite
    # values parsed before the subcommand with its own None defaults.
    common = argparse.ArgumentParser(add_help=False,
                                     argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="FILE",
                        help="TOML or JSON config file")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--trials", type=int, help="Monte Carlo slots per point")
    common.add_argument("--out", metavar="PATH", help="output file path")
    common.add_argument("--workers", type=int,
                        help="worker processes (default: CPTDET_WORKERS or 1)")
    common.add_argument("--Q", type=int)
    common.add_argument("--K", "--k", dest="K", type=int)
    common.add_argument("--N", type=int)
    common.add_argument("--N1", type=int)
    for key in ("xi", "r-in", "r-out", "p", "p-bar", "sigma2"):
        common.add_argument(f"--{key}", type=float)
    common.add_argument("--mechanisms",
                        help="comma-separated subset of ucpt,acptf,acptd")

    parser = argparse.ArgumentParser(
        prog="cptdet",
        description="Activity-level detection for coordinated pilot "
                    "transmission: Monte Carlo campaigns, theoretical "
                    "distributions, and reproduction of the reference "
                    "results.",
        parents=[common])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("deploy", parents=[common],
                   help="generate a deployment JSON")
    sub.add_parser("simulate", parents=[common],
                   help="empirical PMF + success at fixed K")
    p_theory = sub.add_parser("theory", parents=[common],
                              help="theoretical PMF tables")
    p_theory.add_argument("--mechanism", choices=("ucpt", "acptf", "acptd"))
    p_sweep = sub.add_parser("sweep", parents=[common],
                             help="success probability sweeps")
    p_sweep.add_argument("--variable", required=True,
                         choices=experiments.SWEEP_VARIABLES)
    p_sweep.add_argument("--grid", help="comma-separated grid values")
    p_repro = sub.add_parser("reproduce", parents=[common],
                             help="reference tables/figures")
    p_repro.add_argument("target", choices=REPRODUCE_TARGETS)
    sub.add_parser("validate", parents=[common],
                   help="statistical invariant suite")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    flags = {key: getattr(args, key.replace("-", "_"), None)
             for key in ("Q", "K", "N", "N1", "xi", "r-in", "r-out", "p",
                         "p-bar", "sigma2", "seed", "trials", "mechanisms")}
    flags = {k.replace("-", "_"): v for k, v in flags.items()}
    grid = None
    if getattr(args, "grid", None):
        grid = tuple(float(v) for v in args.grid.split(","))
    try:
        cfg = parse_and_merge(getattr(args, "config", None), flags)
        return dispatch(
            args.subcommand, cfg, out=getattr(args, "out", None),
            target=getattr(args, "target", None),
            variable=getattr(args, "variable", None),
            grid=grid, mechanism=getattr(args, "mechanism", None),
            n_workers=getattr(args, "workers", None))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

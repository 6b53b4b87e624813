"""Command-line entry point: ``xlmimo {corr,se,outage,compare,delta-map}``.

Every command reads a YAML config, writes CSVs plus ``manifest.yaml`` into
the output directory and exits 0 on success, 2 on configuration errors and
3 when a numerical routine fails to converge.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from typing import Iterable, Sequence

import numpy as np
import yaml
from pydantic import ValidationError

from . import __version__
from .channel import ds_mean_correlations, link_correlations, realization_batches
from .config import CompareConfig, CorrConfig, DeltaMapConfig, OutageConfig, SeConfig, dump_config, grid_values
from .correlation import AngularSpread, delta_map, delta_zero_crossings, farfield_corr, nearfield_corr
from .geometry import ArrayGeometry, ClusterCenter
from .metrics import (SsLinkSummary, ergodic_se_mc, gram_spectrum, op_ss_approx, outage_mc, se_ds_upper,
                      se_ss_approx, se_ss_upper)
from .numerics import ConvergenceError, RngStream
from .plots import line_chart
from .scenarios import ds_analysis_link, run_comparison, ss_analysis_link

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE = 0, 2, 3

COMMANDS = ("corr", "se", "outage", "compare", "delta-map")
_CONFIG_TYPES = {"corr": CorrConfig, "se": SeConfig, "outage": OutageConfig,
                 "compare": CompareConfig, "delta-map": DeltaMapConfig}

# stream ids under the master seed
_LAYOUT_STREAM, _TRIAL_STREAM = 1, 2


class ConfigError(Exception):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if np.isnan(x) else format(x, ".9g")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _delta_rows(cfg, geom):
    dists = cfg.delta_grid.distance_values()
    angles = grid_values(cfg.delta_grid.angles)
    dd, tt = np.meshgrid(dists, angles, indexing="ij")
    gap = delta_map(geom, dd, tt) - geom.n_elements
    return [(d, t, g) for d, t, g in zip(dd.ravel(), tt.ravel(), gap.ravel())], dists


def cmd_corr(cfg: CorrConfig, out: str) -> list[str]:
    geom = ArrayGeometry.half_wavelength(cfg.n_elements, cfg.wavelength)
    files = []
    if cfg.spectrum is not None:
        sp = cfg.spectrum
        spread = AngularSpread(sp.angle, sp.concentration_inv)
        near = nearfield_corr(geom, ClusterCenter(sp.distance, sp.angle), spread).eigenvalues
        far = farfield_corr(geom, spread).eigenvalues
        path = os.path.join(out, "spectrum.csv")
        write_csv(path, ("index", "nearfield_eig", "farfield_eig"),
                  [(i, a, b) for i, (a, b) in enumerate(zip(near, far))])
        files.append(path)
        if cfg.output.emit_plots:
            idx = np.arange(near.size)
            line_chart(os.path.join(out, "spectrum.svg"),
                       {"near field": (idx, 10 * np.log10(np.clip(near, 1e-300, None))),
                        "far field": (idx, 10 * np.log10(np.clip(far, 1e-300, None)))},
                       "eigenvalue index", "eigenvalue (dB)", "correlation spectrum")
    if cfg.delta_grid is not None:
        files += _write_delta(cfg, geom, out)
    return files


def _write_delta(cfg, geom, out) -> list[str]:
    rows, dists = _delta_rows(cfg, geom)
    path = os.path.join(out, "delta_grid.csv")
    write_csv(path, ("d", "theta", "delta_minus_n"), rows)
    if cfg.output.emit_plots:
        angles = grid_values(cfg.delta_grid.angles)
        pick = sorted({0, len(dists) // 2, len(dists) - 1})
        series = {f"d={dists[i]:.3g} m": (angles, [r[2] for r in rows[i * len(angles):(i + 1) * len(angles)]])
                  for i in pick}
        line_chart(os.path.join(out, "delta_grid.svg"), series, "angle (rad)", "trace minus N", "trace gap")
    return [path]


def cmd_delta_map(cfg: DeltaMapConfig, out: str) -> list[str]:
    geom = ArrayGeometry.half_wavelength(cfg.n_elements, cfg.wavelength)
    files = _write_delta(cfg, geom, out)
    rows = []
    for d in cfg.delta_grid.distance_values():
        zc = delta_zero_crossings(geom, d, cfg.crossing_tolerance)
        rows.append((d, None, None) if zc is None else (d, zc.theta1, zc.theta2))
    path = os.path.join(out, "crossings.csv")
    write_csv(path, ("d", "theta1", "theta2"), rows)
    return files + [path]


def _analysis_link(cfg):
    sc = cfg.scenario
    layout = RngStream(cfg.seed if sc.layout_seed is None else sc.layout_seed, _LAYOUT_STREAM)
    if sc.route == "ss":
        return ss_analysis_link(sc.n_rx, sc.n_tx, sc.clusters, layout, sc.carrier_ghz, sc.concentration_inv,
                                sc.rx_angles, sc.tx_angles)
    return ds_analysis_link(sc.n_rx, sc.n_tx, sc.clusters, layout, sc.carrier_ghz, sc.concentration_inv,
                            sc.coupling)


_ROUTE = {"ss": "ss_equivalent", "ds": "ds_equivalent", "analytical": "analytical"}


def _spectrum_for(cfg):
    link = _analysis_link(cfg)
    corr = link_correlations(link)
    batches = realization_batches(_ROUTE[cfg.scenario.route], link, corr, RngStream(cfg.seed, _TRIAL_STREAM),
                                  cfg.trials, threads=cfg.threads)
    return link, corr, gram_spectrum(list(batches))


def cmd_se(cfg: SeConfig, out: str) -> list[str]:
    link, corr, spec = _spectrum_for(cfg)
    summary = SsLinkSummary.from_link(link, corr) if cfg.scenario.route == "ss" else None
    ds_eigs = None
    if cfg.scenario.route == "ds" and "upper" in cfg.closed_forms:
        mr, mt = ds_mean_correlations(corr)
        a = link.coupling.entries
        ds_eigs = (mr.eigenvalues, mt.eigenvalues, np.linalg.eigvalsh(a.conj().T @ a))
    rows = []
    for db in grid_values(cfg.power_db):
        g = 10 ** (db / 10)
        mc = ergodic_se_mc(spec, g)
        approx = se_ss_approx(summary, g) if "approx" in cfg.closed_forms else None
        upper = None
        if "upper" in cfg.closed_forms:
            upper = se_ss_upper(summary, g) if summary is not None else se_ds_upper(*ds_eigs, g)
        rows.append((db, mc.mean, mc.stderr, approx, upper))
    path = os.path.join(out, "se.csv")
    write_csv(path, ("power_db", "mc_estimate", "mc_stderr", "approx", "upper_bound"), rows)
    if cfg.output.emit_plots:
        _metric_plot(out, "se", rows, "power per antenna (dB)", "ergodic SE (bit/s/Hz)")
    return [path]


def cmd_outage(cfg: OutageConfig, out: str) -> list[str]:
    link, corr, spec = _spectrum_for(cfg)
    summary = SsLinkSummary.from_link(link, corr) if "approx" in cfg.closed_forms else None
    g_bar = 10 ** (cfg.transmit_power_db / 10)
    rows = []
    for db in grid_values(cfg.threshold_db):
        th = 10 ** (db / 10)
        mc = outage_mc(spec, g_bar, th)
        approx = op_ss_approx(summary, g_bar, th) if summary is not None else None
        rows.append((db, mc.probability, mc.stderr, approx, None))
    path = os.path.join(out, "outage.csv")
    write_csv(path, ("threshold_db", "mc_estimate", "mc_stderr", "approx", "upper_bound"), rows)
    if cfg.output.emit_plots:
        _metric_plot(out, "outage", rows, "SNR threshold (dB)", "outage probability")
    return [path]


def _metric_plot(out, stem, rows, xlabel, ylabel):
    x = [r[0] for r in rows]
    series = {"Monte-Carlo": (x, [r[1] for r in rows])}
    for col, name in ((3, "approximation"), (4, "upper bound")):
        if any(r[col] is not None for r in rows):
            series[name] = (x, [np.nan if r[col] is None else r[col] for r in rows])
    line_chart(os.path.join(out, f"{stem}.svg"), series, xlabel, ylabel, stem)


def cmd_compare(cfg: CompareConfig, out: str) -> list[str]:
    setups = [s.to_setup() for s in cfg.setups]
    res = run_comparison(setups, cfg.trials, cfg.transmit_power_db, RngStream(cfg.seed, _TRIAL_STREAM),
                         drops=cfg.drops, threads=cfg.threads)
    files = []
    cap_series, snr_series = {}, {}
    for s in setups:
        for stem, (x, f), store in (("capacity", res.capacity_cdf(s.name), cap_series),
                                    ("snr", res.snr_cdf(s.name), snr_series)):
            path = os.path.join(out, f"{stem}_{s.name}.csv")
            write_csv(path, ("value", "cdf"), zip(x, f))
            files.append(path)
            store[s.name] = (x, f)
    if cfg.output.emit_plots:
        line_chart(os.path.join(out, "capacity.svg"), cap_series, "capacity (bit/s)", "CDF", "capacity")
        line_chart(os.path.join(out, "snr.svg"), snr_series, "receive SNR (dB)", "CDF", "receive SNR")
    return files


_HANDLERS = {"corr": cmd_corr, "se": cmd_se, "outage": cmd_outage, "compare": cmd_compare, "delta-map": cmd_delta_map}


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xlmimo", description="Near-field XL-MIMO channel experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML configuration file")
        s.add_argument("--seed", type=int, help="64-bit master seed (overrides the config)")
        s.add_argument("--trials", type=int, help="Monte-Carlo trial count (overrides the config)")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        s.add_argument("--emit-plots", action="store_true", help="also write SVG line charts")
    return p


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"])
        parts.append(f"'{loc or '<root>'}': {e['msg']}")
    return "; ".join(parts)


def resolve_config(args):
    try:
        with open(args.config, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    data.setdefault("command", args.command)
    if data["command"] != args.command:
        raise ConfigError(f"'command': config is for '{data['command']}', not '{args.command}'")
    for flag, key in (("seed", "seed"), ("trials", "trials"), ("threads", "threads")):
        v = getattr(args, flag)
        if v is not None:
            data[key] = v
    if args.out is not None or args.emit_plots:
        out = dict(data.get("output") or {})
        if args.out is not None:
            out["directory"] = args.out
        if args.emit_plots:
            out["emit_plots"] = True
        data["output"] = out
    data["tool_version"] = __version__
    try:
        return _CONFIG_TYPES[args.command].model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = cfg.output.directory
        os.makedirs(out, exist_ok=True)
        files = _HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = os.path.join(out, "manifest.yaml")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    for f in files + [manifest]:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

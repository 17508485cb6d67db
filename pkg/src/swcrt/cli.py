"""``swcrt`` command-line interface.

Usage::

    swcrt <weights|simulate|estimate|design-info> --config PATH
          [--out DIR] [--threads N] [--seed S] [--data CSV]

All outputs are collected in memory and written once at the end. Exit
codes: 0 success, 2 invalid input, 3 numerical failure, 4 file I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from dataclasses import replace

from . import __version__
from .config import COMMANDS, RunConfig, load_config
from .correlation import cell_mean_variance, gamma
from .design import Structure, design_matrix, design_matrix_from_sequences
from .errors import ComputeError, IoError, SWCRTError, ValidationError
from .gls import FitResult, fit_feasible_gls, fit_gls, information_criteria, profile_log_likelihood
from .mc import fmt, reports_to_csv, resolve_workers, simulate_study
from .panel import PanelData, read_panel
from .svg import PALETTE, Figure, Panel
from .variance import VarianceMethod, coefficient_vcov, confidence_interval, variance_report
from .weights import weight_curve_table

log = logging.getLogger("swcrt")

EXIT_OK, EXIT_VALIDATION, EXIT_COMPUTE, EXIT_IO = 0, 2, 3, 4


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def cmd_weights(config: RunConfig) -> dict[str, str]:
    """Weight tables and one figure per weight family."""
    wb = config.weights
    files: dict[str, str] = {}
    rows = []
    for family in wb.families:
        table = weight_curve_table(family, wb.Q, wb.gamma)
        rows += table
        fig = Figure(title=f"Scaled estimand weights ({family})", ncols=min(len(wb.Q), 3))
        for Q in wb.Q:
            xlabel = "exposure time s" if family in ("w1", "w4") else "calendar period j"
            panel = fig.add(Panel(title=f"Q = {Q}", xlabel=xlabel, ylabel="scaled weight"))
            panel.hline(0.0, "#444444", dash=False)
            panel.hline(1.0, "#888888", dash=True)
            gammas = wb.gamma if family != "w2" else wb.gamma[:1]
            for k, g in enumerate(gammas):
                pts = [r for r in table if r.Q == Q and r.gamma == g]
                label = f"gamma = {g:g}" if family != "w2" else "any gamma"
                panel.line([r.index for r in pts], [r.scaled_weight for r in pts], PALETTE[k % len(PALETTE)], label)
            panel.xticks = sorted({r.index for r in table if r.Q == Q})
        if "svg" in config.output.formats:
            files[f"weights_{family}.svg"] = fig.to_svg()
    if "csv" in config.output.formats:
        files["weights.csv"] = _csv(
            ("family", "Q", "gamma", "index", "weight", "scaled_weight"),
            ([r.family, r.Q, fmt(r.gamma), r.index, fmt(r.weight), fmt(r.scaled_weight)] for r in rows),
        )
    return files


def cmd_simulate(config: RunConfig, workers: int | None = None) -> dict[str, str]:
    """Monte Carlo summary table and a bias/coverage figure."""
    scenario = config.scenario_spec
    analyses = config.analyses()
    log.info("simulating %s: %d replicates x %d analyses", scenario.name, config.mc.n_reps, len(analyses))
    study = simulate_study(scenario, analyses, config.mc.n_reps, config.mc.base_seed, workers)
    reports = study.reports()
    files: dict[str, str] = {}
    if "csv" in config.output.formats:
        files["simreport.csv"] = reports_to_csv(reports)
    if "svg" in config.output.formats:
        files[f"simulate_{scenario.name}.svg"] = _simulation_figure(scenario.name, analyses, reports)
    return files


def _simulation_figure(name, analyses, reports) -> str:
    fig = Figure(title=f"Simulation summary: {name}", ncols=2, panel_width=460)
    labels = [f"{a.estimator}/{a.correlation[:5]}" for a in analyses]
    xs = list(range(1, len(analyses) + 1))
    bias = fig.add(Panel(title="Percent bias", ylabel="% bias", xticks=xs, xticklabels=labels))
    first = {}
    for r in reports:
        first.setdefault((r.estimator, r.correlation), r)
    heights = []
    for a in analyses:
        r = first[(a.estimator, a.correlation)]
        heights.append(r.percent_bias if r.percent_bias is not None else math.nan)
    bias.bars(xs, heights, [PALETTE[0] if a.correlation == "exchangeable" else PALETTE[1] for a in analyses])
    bias.hline(0.0, "#444444", dash=False)
    cov = fig.add(Panel(title="Coverage of 95% intervals", ylabel="coverage", xticks=xs, xticklabels=labels,
                        ylim=(0.0, 1.05)))
    cov.hline(0.95, "#444444", dash=True)
    methods = []
    for a in analyses:
        for m in a.methods:
            if m not in methods:
                methods.append(m)
    for k, m in enumerate(methods):
        offset = (k - (len(methods) - 1) / 2) * 0.15
        px, py = [], []
        for x, a in zip(xs, analyses):
            for r in reports:
                if (r.estimator, r.correlation, r.variance_method) == (a.estimator, a.correlation, m.value):
                    px.append(x + offset)
                    py.append(r.coverage)
        cov.points(px, py, PALETTE[(k + 2) % len(PALETTE)], m.value)
    return fig.to_svg()


def _fit_panel(data: PanelData, dm, correlation: str, gamma: float | None) -> tuple[FitResult, float, float]:
    within = data.within
    n_obs = data.means.size * (data.cell_size if within is not None else 1)
    if correlation == "exchangeable":
        fit = fit_feasible_gls(dm, data.means, within)
        ml = fit_feasible_gls(dm, data.means, within, method="ml")
        ll, k_var = ml.log_likelihood, 2
    else:
        g = 0.0 if correlation == "independence" else gamma
        fit = fit_gls(dm, data.means, g, within=within, correlation=correlation)
        ll, k_var = profile_log_likelihood(dm, data.means, g, within, "ml"), 1
    ml_fit = replace(fit, log_likelihood=ll, likelihood_method="ml", n_variance_params=k_var)
    aic, bic = information_criteria(ml_fit, n_obs)
    return fit, aic, bic


def cmd_estimate(config: RunConfig, data_path: str) -> dict[str, str]:
    """Fit every requested structure and correlation to a data file."""
    data = read_panel(data_path)
    I, J = data.means.shape  # noqa: E741
    log.info("read %d clusters x %d periods, %d per cell", I, J, data.cell_size)
    methods = [VarianceMethod.parse(m) for m in config.analysis.variance_methods]
    est_rows, eff_rows = [], []
    figures: dict[str, str] = {}
    for s in config.analysis.structures:
        dm = design_matrix_from_sequences(data.sequences, J, Structure.parse(s))
        for corr in config.analysis.correlations:
            fit, aic, bic = _fit_panel(data, dm, corr, config.analysis.gamma)
            row = [dm.structure.value, corr, fit.estimator, fmt(fit.estimate), fmt(fit.gamma), fmt(aic), fmt(bic),
                   int(fit.boundary)]
            curves = {}
            for m in methods:
                rep = variance_report(fit, m)
                row += [fmt(rep.se), fmt(rep.ci_low), fmt(rep.ci_high)]
                vcov = coefficient_vcov(fit, m)
                dof = fit.n_clusters - 1
                lo_hi = []
                for t, (name, b) in enumerate(zip(fit.columns, fit.coefficients)):
                    se = math.sqrt(max(vcov[t, t], 0.0))
                    lo, hi = confidence_interval(b, se, m.default_dof_rule, dof)
                    eff_rows.append([dm.structure.value, corr, m.value, name, fmt(b), fmt(se), fmt(lo), fmt(hi)])
                    lo_hi.append((lo, hi))
                curves[m] = lo_hi
            est_rows.append(row)
            if dm.structure is not Structure.IMMEDIATE:
                figures[f"effects_{dm.structure.value}_{corr}.svg"] = _effect_figure(fit, curves, methods[0])
    files: dict[str, str] = {}
    if "csv" in config.output.formats:
        header = ["structure", "correlation", "estimator", "point", "gamma", "aic", "bic", "boundary"]
        for m in methods:
            header += [f"se_{m.value}", f"ci_low_{m.value}", f"ci_high_{m.value}"]
        files["estimates.csv"] = _csv(header, est_rows)
        files["effects.csv"] = _csv(
            ["structure", "correlation", "variance_method", "term", "estimate", "se", "ci_low", "ci_high"], eff_rows
        )
    if "svg" in config.output.formats:
        files.update(figures)
    return files


def _effect_figure(fit: FitResult, curves, method: VarianceMethod) -> str:
    n = fit.n_treatment
    if fit.structure is Structure.EXPOSURE:
        xs = list(range(1, n + 1))
        xlabel = "exposure time s"
    else:
        xs = list(range(2, n + 2))
        xlabel = "calendar period j"
    lo = [c[0] for c in curves[method][:n]]
    hi = [c[1] for c in curves[method][:n]]
    fig = Figure(title=f"{fit.structure.value} fit ({fit.correlation}), {method.value} intervals")
    p = fig.add(Panel(xlabel=xlabel, ylabel="treatment effect", xticks=xs))
    p.ribbon(xs, lo, hi, PALETTE[0])
    p.line(xs, fit.treatment_effects, PALETTE[0], "period-specific effect")
    p.hline(fit.estimate, PALETTE[1], dash=True, label=f"{fit.estimator} = {fit.estimate:.3f}")
    p.hline(0.0, "#444444", dash=False)
    return fig.to_svg()


def cmd_design_info(config: RunConfig) -> tuple[dict[str, str], str]:
    """Treatment layout of the design plus a text summary."""
    d = config.design_spec
    scenario = config.scenario_spec
    g = gamma(scenario.correlation, d.K)
    lines = [
        f"clusters I = {d.I}, periods J = {d.J}, sequences Q = {d.Q}, cell size K = {d.K}",
        f"clusters per sequence = {d.clusters_per_sequence}, treated cells = {d.n_treated_cells}",
        f"cell-mean correlation gamma = {g:.6g}, cell-mean variance = {cell_mean_variance(scenario.correlation, d.K):.6g}",
    ]
    for s in Structure:
        dm = design_matrix(d, s)
        lines.append(f"{s.value} design matrix: {dm.shape[0]} rows x {dm.shape[1]} columns ({s.estimator})")
    rows = []
    for q in range(1, d.Q + 1):
        for j in range(1, d.J + 1):
            treated = int(j > q)
            rows.append([q, j, treated, j - q if treated else 0])
    files: dict[str, str] = {}
    if "csv" in config.output.formats:
        files["design.csv"] = _csv(("sequence", "period", "treated", "exposure_time"), rows)
    if "svg" in config.output.formats:
        files["design.svg"] = _design_figure(d)
    return files, "\n".join(lines) + "\n"


def _design_figure(d) -> str:
    fig = Figure(title=f"Stepped-wedge layout ({d.Q} sequences x {d.J} periods)")
    p = fig.add(Panel(xlabel="period", ylabel="sequence (top = 1)", xticks=list(range(1, d.J + 1)),
                      xlim=(0.5, d.J + 0.5), ylim=(0.5, d.Q + 0.5)))
    cells = [(j, q) for q in range(1, d.Q + 1) for j in range(1, d.J + 1)]
    control = [(j, d.Q + 1 - q) for j, q in cells if j <= q]
    treated = [(j, d.Q + 1 - q) for j, q in cells if j > q]
    p.points([c[0] for c in control], [c[1] for c in control], "#9e9e9e", "control")
    p.points([c[0] for c in treated], [c[1] for c in treated], PALETTE[1], "treated")
    return fig.to_svg()


def write_outputs(files: dict[str, str], directory: str) -> None:
    """Write every output file into ``directory`` (created if needed)."""
    try:
        os.makedirs(directory, exist_ok=True)
        for name in sorted(files):
            with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(files[name])
    except OSError as exc:
        raise IoError(f"cannot write outputs to {directory}: {exc.strerror or exc}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swcrt", description="Stepped-wedge trial estimators, weights and simulations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker processes for simulations (default: SWCRT_THREADS or 1)")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--data", help="data CSV for estimate (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ValidationError("--seed must be a 64-bit unsigned integer")
        config = replace(config, mc=replace(config.mc, base_seed=args.seed))
    if args.out is not None:
        config = replace(config, output=replace(config.output, directory=args.out))
    config = replace(config, command=args.command)
    workers = resolve_workers(args.threads)
    summary = ""
    if args.command == "weights":
        files = cmd_weights(config)
    elif args.command == "simulate":
        files = cmd_simulate(config, workers)
    elif args.command == "estimate":
        path = args.data or config.data.path
        if not path:
            raise ValidationError("estimate needs a data file (--data or data.path)")
        files = cmd_estimate(config, path)
    else:
        files, summary = cmd_design_info(config)
    write_outputs(files, config.output.directory)
    if summary:
        sys.stdout.write(summary)
    for name in sorted(files):
        log.info("wrote %s", os.path.join(config.output.directory, name))
    return EXIT_OK


def main(argv=None) -> int:
    """Entry point; maps package errors to exit codes."""
    try:
        return run(argv)
    except IoError as exc:
        print(f"swcrt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"swcrt: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ComputeError as exc:
        print(f"swcrt: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except SWCRTError as exc:  # pragma: no cover - every error derives from one of the above
        print(f"swcrt: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

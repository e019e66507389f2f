"""``localclock`` command line: run scenario files and write their results.

Usage::

    localclock SCENARIO.toml [MORE.toml ...] [-o DIR] [-v] [--dry-run]

Exit status: 0 success, 1 invalid scenario, 2 runtime failure (including
failed checks), 3 wrap-around monitor abort.  ``LOCALCLOCK_OUTPUT_DIR``
overrides the output directory of the scenario file, ``LOCALCLOCK_THREADS``
sets how many scenarios a batch runs at once.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import MonitorAbort
from .experiments import fmt, run_experiment, write_json
from .scenario import Scenario, ScenarioError, parse_scenario

log = logging.getLogger("localclock")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_ABORT = 0, 1, 2, 3
OUTPUT_ENV = "LOCALCLOCK_OUTPUT_DIR"
THREADS_ENV = "LOCALCLOCK_THREADS"


class ExperimentError(RuntimeError):
    """An experiment failed; the message names the experiment."""


@dataclass
class RunRecord:
    experiment: str
    scenario_hash: str
    version: str
    output_dir: str
    started: str
    finished: str = ""
    status: str = "running"  # ok | checks_failed | aborted | error
    message: str = ""
    files: list = field(default_factory=list)
    figures: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    formats: list = field(default_factory=lambda: ["csv"])

    @property
    def passed(self) -> bool:
        return self.status == "ok"

    @property
    def exit_code(self) -> int:
        return {"ok": EXIT_OK, "aborted": EXIT_ABORT}.get(self.status, EXIT_RUNTIME)

    def path(self, name) -> Path:
        return Path(self.output_dir) / name

    def save(self) -> Path:
        return write_json(self.path("run_record.json"), asdict(self))

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))


def resolve_output_dir(scenario: Scenario, override=None) -> Path:
    if override is not None:
        return Path(override)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path(scenario["output"]["directory"])


def run(scenario: Scenario, output_dir=None) -> RunRecord:
    """Execute the scenario's experiment and persist its results.

    Monitor aborts return a record with status ``aborted`` and whatever
    partial output was written; any other failure is raised as
    :class:`ExperimentError` after the record has been saved.
    """
    out = resolve_output_dir(scenario, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = RunRecord(scenario.experiment, scenario.digest, __version__, str(out),
                       datetime.now(timezone.utc).isoformat(),
                       formats=list(scenario["output"]["formats"]))
    (out / "scenario.toml").write_text(scenario.to_toml())
    log.info("running %s into %s", scenario.experiment, out)
    try:
        outcome = run_experiment(scenario, out)
    except MonitorAbort as exc:
        record.status, record.message = "aborted", str(exc)
        record.files = sorted(p.name for p in out.glob("*_partial.csv"))
    except Exception as exc:
        record.status, record.message = "error", f"{scenario.experiment}: {exc}"
        record.finished = datetime.now(timezone.utc).isoformat()
        record.save()
        raise ExperimentError(record.message) from exc
    else:
        report = out / "summary.json"
        write_json(report, {"experiment": scenario.experiment, "checks": outcome.checks,
                            "summary": outcome.summary})
        record.files = [Path(p).name for p in outcome.files] + [report.name]
        record.checks = outcome.checks
        failed = [c["name"] for c in outcome.checks if not c["passed"]]
        record.status = "checks_failed" if failed else "ok"
        record.message = f"failed checks: {', '.join(failed)}" if failed else ""
    record.finished = datetime.now(timezone.utc).isoformat()
    record.save()
    return record


def _copy_columns(source: Path, columns, where=None):
    with open(source, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if where is not None:
        rows = [r for r in rows if where(r)]
    return [[r[c] for c in columns] for r in rows]


def _figure(out: Path, name, meta: dict, header, rows) -> Path:
    path = out / f"fig_{name}.csv"
    with open(path, "w", newline="") as fh:
        for key in ("figure", "title", "anchor", "x", "y", "scale", "kind"):
            value = name if key == "figure" else meta.get(key)
            if value:
                fh.write(f"# {key}: {value}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _theorem1_figures(rec, out):
    src = rec.path("diagnostics.csv")
    limits = [
        ("escape", "Escape from the ball |x| < R",
         "local-time asymptotics, first limit: ||F(|x| < R) exp(-itH) psi|| -> 0"),
        ("energy_mismatch", "Energy cut-off mismatch",
         "local-time asymptotics, second limit: ||(phi(H) - phi(H0)) exp(-itH) psi|| -> 0"),
        ("velocity_mismatch", "Velocity mismatch",
         "local-time asymptotics, third limit: ||(x/t - p/mu) exp(-itH) psi|| -> 0"),
    ]
    return [_figure(out, name, {"title": title, "anchor": anchor, "x": "t", "y": name,
                                "scale": "loglog"},
                    ["t", name], _copy_columns(src, ["t", name]))
            for name, title, anchor in limits]


def _table_figure(rec, out, source, name, meta):
    with open(rec.path(source), newline="") as fh:
        rows = list(csv.reader(fh))
    return _figure(out, name, meta, rows[0], rows[1:])


def _two_clocks_figures(rec, out):
    anchor = "two clocks: |k| moves at unit speed without spreading, k^2/2 at speed k0 with spreading"
    return [
        _table_figure(rec, out, "centers.csv", "centers",
                      {"title": "Packet centre <x>(t)", "anchor": anchor, "x": "t", "y": "<x>"}),
        _table_figure(rec, out, "widths.csv", "widths",
                      {"title": "Packet width sigma(t)", "anchor": anchor, "x": "t",
                       "y": "sigma"}),
    ]


def _ergodic_figures(rec, out):
    return [_table_figure(rec, out, "ergodic.csv", "ergodic_error", {
        "title": "Time average vs eigenprojector", "x": "T", "y": "error", "scale": "loglog",
        "anchor": "mean ergodic identity: (1/T) int exp(-it lam) exp(itH) psi dt -> P(lam) psi"})]


def _stone_figures(rec, out):
    src, oracle = rec.path("density.csv"), rec.path("density_oracle.csv")
    with open(src, newline="") as fh:
        eps_values = list(dict.fromkeys(r["eps"] for r in csv.DictReader(fh)))
    figs = []
    for eps in eps_values:
        solved = _copy_columns(src, ["lambda", "value"], lambda r: r["eps"] == eps)
        exact = _copy_columns(oracle, ["value"], lambda r: r["eps"] == eps)
        figs.append(_figure(out, f"stone_density_eps{float(eps):g}", {
            "title": f"Broadened spectral density, eps = {float(eps):g}",
            "anchor": "Stone formula: (R(lam + i eps) - R(lam - i eps)) / (2 pi i)",
            "x": "lambda", "y": "density"},
            ["lambda", "linear_solve", "eigen_broadened"],
            [s + e for s, e in zip(solved, exact)]))
    return figs


def _fourier_laplace_figures(rec, out):
    return [_table_figure(rec, out, "fl_tail.csv", "fl_tail", {
        "title": "Truncation error of the time integral", "x": "T_max", "y": "error",
        "scale": "semilogy",
        "anchor": "Fourier-Laplace bridge: R(z) = i int_0^inf exp(itz) exp(-itH) dt"})]


def _klein_gordon_figures(rec, out):
    return [
        _table_figure(rec, out, "kg_pulse.csv", "kg_pulse", {
            "title": "Massless pulse vs characteristics", "x": "x", "y": "q",
            "anchor": "Klein-Gordon field, mu = 0: left and right movers at speed c"}),
        _table_figure(rec, out, "kg_energy.csv", "kg_energy", {
            "title": "Field energy", "x": "t", "y": "E",
            "anchor": "Klein-Gordon field energy conservation"}),
    ]


def _com_figures(rec, out):
    return [_figure(out, "com_spectrum", {
        "title": "Two-particle spectrum vs COM + relative sums", "x": "index",
        "y": "eigenvalue", "anchor": "centre-of-mass separation H = H_C + H_rel"},
        ["index", "full", "summed"],
        _copy_columns(rec.path("com_spectrum.csv"), ["index", "full", "summed"]))]


def _beats_figures(rec, out):
    anchor = "beats: |psi(t, x)|^2 oscillates at the level gaps"
    return [
        _table_figure(rec, out, "beats_series.csv", "beats_series", {
            "title": "Probability density at the probe point", "x": "t",
            "y": "|psi|^2", "anchor": anchor}),
        _table_figure(rec, out, "beats_peaks.csv", "beats_peaks", {
            "title": "Spectral peaks", "x": "angular frequency", "y": "power",
            "kind": "stem", "anchor": anchor}),
    ]


def _equivalence_figures(rec, out):
    data = json.loads(rec.path("equivalence.json").read_text())
    rows = [[c["name"], fmt(c["max_error"]), fmt(c["tolerance"])] for c in data["checks"]]
    return [_figure(out, "equivalence", {
        "title": "Time-domain vs stationary routes", "x": "check", "y": "error",
        "kind": "bar", "scale": "semilogy",
        "anchor": "equivalence of ergodic, Fourier-Laplace and Stone routes"},
        ["check", "max_error", "tolerance"], rows)]


FIGURES = {
    "theorem1": _theorem1_figures,
    "two_clocks": _two_clocks_figures,
    "ergodic": _ergodic_figures,
    "stone": _stone_figures,
    "fourier_laplace": _fourier_laplace_figures,
    "klein_gordon": _klein_gordon_figures,
    "com_separation": _com_figures,
    "beats": _beats_figures,
    "equivalence": _equivalence_figures,
}


def emit_plot_data(record: RunRecord, render=None) -> list[Path]:
    """Write one ``fig_*.csv`` per figure, plus a PNG when ``png`` is requested.

    Raises FileNotFoundError when a result file listed in the record is gone.
    """
    if record.status not in ("ok", "checks_failed"):
        raise ValueError(f"no plot data for a run with status {record.status!r}")
    out = Path(record.output_dir)
    for name in record.files:
        if not (out / name).is_file():
            raise FileNotFoundError(f"result file {out / name} is missing")
    figures = FIGURES[record.experiment](record, out)
    render = "png" in record.formats if render is None else render
    if render:
        from .plotting import render_figure
        figures += [render_figure(p) for p in list(figures)]
    record.figures = [p.name for p in figures]
    record.save()
    return figures


def execute(path, output_dir=None, dry_run=False, subdir=None) -> int:
    """Validate and run one scenario file; return its exit status.

    ``subdir`` places the results one level below the resolved directory
    (batch runs use the file stem so scenarios never share a directory).
    """
    try:
        scenario = parse_scenario(path)
    except ScenarioError as exc:
        for err in exc.errors:
            print(f"{path}: {err}", file=sys.stderr)
        return EXIT_INVALID
    if dry_run:
        print(f"{path}: valid {scenario.experiment} scenario")
        return EXIT_OK
    if subdir is not None:
        output_dir = resolve_output_dir(scenario, output_dir) / subdir
    try:
        record = run(scenario, output_dir)
    except ExperimentError as exc:
        print(f"{path}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if record.status == "aborted":
        print(f"{path}: aborted: {record.message}", file=sys.stderr)
        return EXIT_ABORT
    emit_plot_data(record)
    for c in record.checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {record.experiment}.{c['name']}: {c['value']:.6g} "
              f"(tolerance {c['tolerance']:.3g})")
    if record.status != "ok":
        print(f"{path}: {record.message}", file=sys.stderr)
    print(f"results in {record.output_dir}")
    return record.exit_code


def batch_subdirs(paths) -> list[str]:
    """Distinct sub-directory names derived from the file stems."""
    seen = {}
    out = []
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        out.append(stem if seen[stem] == 1 else f"{stem}_{seen[stem]}")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="localclock", description="Run local-clock scenario files.")
    parser.add_argument("config", nargs="+", help="scenario TOML file(s)")
    parser.add_argument("-o", "--output", help="output directory (overrides the file and "
                        f"${OUTPUT_ENV})")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more logging (-vv for debug)")
    parser.add_argument("--dry-run", action="store_true", help="validate only")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if len(args.config) == 1:
        return execute(args.config[0], args.output, args.dry_run)

    n = len(args.config)
    subdirs = batch_subdirs(args.config)
    workers = max(1, int(os.environ.get(THREADS_ENV, "1")))
    if workers == 1 or args.dry_run:
        codes = [execute(p, args.output, args.dry_run, d) for p, d in zip(args.config, subdirs)]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, n)) as pool:
            codes = list(pool.map(execute, args.config, [args.output] * n, [False] * n, subdirs))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())

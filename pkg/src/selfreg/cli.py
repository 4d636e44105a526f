"""Command line surface: simulate, analyze, study and report.

Panels travel as plain CSV (``id,time,signal,excitation`` plus optional
truth columns on simulated exports) with 17-significant-digit decimal
floats, so a write/read round trip is bit-exact.  Study configuration is
a JSON file with a documented schema; unknown keys are rejected.

Exit codes: 0 success, 2 invalid input or malformed file, 3 estimation
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (DataFormatError, EstimationError, SelfRegError,
                     ValidationError)
from .model import FirstOrderParams
from .pipeline import FitResult, make_config, optimize_smoothing, \
    two_step_fit
from .simulate import (ExcitationShape, IndividualSeries, Panel,
                       SimulationCondition, generate_panel)
from .study import (ConditionRun, reference_conditions, replication_seed,
                    run_study)

__all__ = [
    "write_panel",
    "read_panel",
    "StudyConfig",
    "load_config",
    "condition_from_dict",
    "condition_to_dict",
    "main",
]

_REQUIRED_COLS = ("id", "time", "signal", "excitation")
_TRUTH_COLS = ("signal_true", "tau_true", "k_true", "yeq_true")


def _g17(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Panel CSV

def write_panel(panel: Panel, path: str | Path) -> int:
    """Write a panel as CSV, with truth columns when available.

    Returns the number of data rows written.  Floats use 17 significant
    digits, which round-trips IEEE doubles exactly.
    """
    with_truth = panel.has_truth and all(s.params is not None
                                         for s in panel)
    header = ",".join(_REQUIRED_COLS + (_TRUTH_COLS if with_truth else ()))
    lines = [header]
    for s in panel:
        for i in range(len(s.times)):
            cells = [str(s.individual_id), _g17(s.times[i]),
                     _g17(s.signal[i]), _g17(s.excitation[i])]
            if with_truth:
                cells += [_g17(s.signal_true[i]),
                          _g17(s.params.decay_time),
                          _g17(s.params.gain),
                          _g17(s.params.equilibrium)]
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
    return len(lines) - 1


def read_panel(path: str | Path) -> Panel:
    """Read a panel CSV written by :func:`write_panel` (or compatible).

    Rows must be grouped by individual with strictly increasing times;
    parse problems report the offending line number.
    """
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise DataFormatError(f"panel file not found: {path}") from None
    lines = text.splitlines()
    if not lines:
        raise DataFormatError("empty panel file")
    header = tuple(c.strip() for c in lines[0].split(","))
    if header == _REQUIRED_COLS:
        with_truth = False
    elif header == _REQUIRED_COLS + _TRUTH_COLS:
        with_truth = True
    else:
        raise DataFormatError(
            "header must be 'id,time,signal,excitation' optionally "
            f"followed by '{','.join(_TRUTH_COLS)}', got "
            f"'{lines[0]}'", line=1,
        )
    n_cols = len(header)
    order: list[int] = []
    data: dict[int, list[list[float]]] = {}
    last_line: dict[int, int] = {}
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cells = raw.split(",")
        if len(cells) != n_cols:
            raise DataFormatError(
                f"expected {n_cols} cells, got {len(cells)}", line=ln,
            )
        try:
            ind = int(cells[0])
            values = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise DataFormatError(str(exc), line=ln) from None
        if ind not in data:
            order.append(ind)
            data[ind] = []
        elif order[-1] != ind:
            raise DataFormatError(
                f"rows of individual {ind} are not contiguous", line=ln,
            )
        rows = data[ind]
        if rows and values[0] <= rows[-1][0]:
            raise DataFormatError(
                f"times of individual {ind} are not strictly increasing",
                line=ln,
            )
        rows.append(values)
        last_line[ind] = ln
    if not data:
        raise DataFormatError("panel file has no data rows")

    individuals = []
    for ind in order:
        arr = np.asarray(data[ind], dtype=float)
        series = IndividualSeries(
            individual_id=ind,
            times=arr[:, 0],
            signal=arr[:, 1],
            excitation=arr[:, 2],
        )
        if with_truth:
            series.signal_true = arr[:, 3]
            tau, gain, yeq = arr[0, 4], arr[0, 5], arr[0, 6]
            if (np.ptp(arr[:, 4]) != 0.0 or np.ptp(arr[:, 5]) != 0.0
                    or np.ptp(arr[:, 6]) != 0.0):
                raise DataFormatError(
                    f"truth parameters of individual {ind} vary across "
                    "rows", line=last_line[ind],
                )
            series.params = FirstOrderParams.from_decay_time(
                tau, gain=gain, equilibrium=yeq,
                initial_value=float(arr[0, 3]),
            )
        individuals.append(series)
    return Panel(individuals)


# ---------------------------------------------------------------------------
# Configuration

_CONDITION_KEYS = {
    "decay_rate", "decay_time", "gain", "equilibrium", "shape", "n_obs",
    "n_indiv", "stn_pct", "sd_pct", "regression", "homogeneous",
    "condition_id",
}

_CONFIG_KEYS = {
    "conditions", "reference_ids", "methods", "regressions", "n_reps",
    "seed", "workers", "glla_grid", "spar_grid", "out_dir",
}

_FAMILY_ALIASES = {"glla": "glla", "spline": "spline", "fda": "spline"}


def condition_from_dict(d: dict) -> SimulationCondition:
    """Build a simulation condition from a config mapping.

    Accepts either ``decay_rate`` or the friendlier ``decay_time`` (not
    both) and the excitation shape as a label (``two_steps``,
    ``one_step``, ``pulses3/5/10``).  Unknown keys are rejected.
    """
    unknown = set(d) - _CONDITION_KEYS
    if unknown:
        raise ValidationError(
            f"unknown condition keys: {sorted(unknown)}"
        )
    kw = dict(d)
    if "decay_time" in kw:
        if "decay_rate" in kw:
            raise ValidationError(
                "give decay_rate or decay_time, not both"
            )
        dt = kw.pop("decay_time")
        if not isinstance(dt, (int, float)) or dt <= 0:
            raise ValidationError(f"decay_time must be > 0, got {dt!r}")
        kw["decay_rate"] = 1.0 / float(dt)
    if "shape" in kw:
        kw["shape"] = ExcitationShape.from_label(str(kw["shape"]))
    try:
        return SimulationCondition(**kw)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


def condition_to_dict(c: SimulationCondition) -> dict:
    d = asdict(c)
    d["shape"] = c.shape.label()
    return d


@dataclass
class StudyConfig:
    """Resolved study settings (defaults mirror benchmark condition 1)."""

    conditions: list[SimulationCondition] = field(
        default_factory=lambda: [reference_conditions()[1]])
    methods: list[str] = field(default_factory=lambda: ["glla", "spline"])
    regressions: list[str] | None = None
    n_reps: int = 100
    seed: int = 0
    workers: int = 1
    glla_grid: list[int] | None = None
    spar_grid: list[float] | None = None
    out_dir: str | None = None

    def grids(self) -> dict[str, list[float]] | None:
        grids = {}
        if self.glla_grid is not None:
            grids["glla"] = [float(v) for v in self.glla_grid]
        if self.spar_grid is not None:
            grids["spline"] = [float(v) for v in self.spar_grid]
        return grids or None

    def expand_conditions(self) -> list[SimulationCondition]:
        """Apply the regression cross-product, if any."""
        if not self.regressions:
            return list(self.conditions)
        return [replace(c, regression=r)
                for c in self.conditions for r in self.regressions]


def _parse_methods(raw: list[str] | str) -> list[str]:
    if isinstance(raw, str):
        raw = [m for m in raw.split(",") if m]
    out = []
    for m in raw:
        key = str(m).strip().lower()
        if key not in _FAMILY_ALIASES:
            raise ValidationError(
                f"unknown method {m!r}; use glla, spline or fda"
            )
        fam = _FAMILY_ALIASES[key]
        if fam not in out:
            out.append(fam)
    if not out:
        raise ValidationError("methods list is empty")
    return out


def _parse_regressions(raw: list[str] | str | None) -> list[str] | None:
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = [r for r in raw.split(",") if r]
    out = []
    for r in raw:
        key = str(r).strip().lower()
        if key not in ("lmm", "ols", "gee"):
            raise ValidationError(
                f"unknown regression {r!r}; use lmm, ols or gee"
            )
        if key not in out:
            out.append(key)
    return out or None


def load_config(path: str | Path) -> StudyConfig:
    """Load and validate a JSON study configuration."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataFormatError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise DataFormatError("config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")

    cfg = StudyConfig()
    conditions: list[SimulationCondition] = []
    if "reference_ids" in raw:
        cells = reference_conditions()
        for cid in raw["reference_ids"]:
            if cid not in cells:
                raise ValidationError(
                    f"reference_ids entries must be 1..17, got {cid!r}"
                )
            conditions.append(cells[cid])
    for d in raw.get("conditions", []):
        if not isinstance(d, dict):
            raise ValidationError("conditions entries must be objects")
        conditions.append(condition_from_dict(d))
    if conditions:
        cfg.conditions = conditions
    if "methods" in raw:
        cfg.methods = _parse_methods(raw["methods"])
    if "regressions" in raw:
        cfg.regressions = _parse_regressions(raw["regressions"])
    for key in ("n_reps", "seed", "workers"):
        if key in raw:
            v = raw[key]
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValidationError(
                    f"{key} must be a non-negative integer, got {v!r}"
                )
            setattr(cfg, key, v)
    if cfg.n_reps < 1:
        raise ValidationError("n_reps must be >= 1")
    if "glla_grid" in raw:
        cfg.glla_grid = [int(v) for v in raw["glla_grid"]]
    if "spar_grid" in raw:
        cfg.spar_grid = [float(v) for v in raw["spar_grid"]]
    if "out_dir" in raw:
        cfg.out_dir = str(raw["out_dir"])
    return cfg


# ---------------------------------------------------------------------------
# Output helpers

def _clean(text: str) -> str:
    """Make free text safe for a one-line unquoted CSV cell."""
    return text.replace(",", ";").replace("\n", " ")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    def fmt(v):
        if isinstance(v, float):
            return _g17(v)
        if isinstance(v, str):
            return _clean(v)
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _load_reference_values() -> dict[tuple[int, str, str], dict]:
    text = resources.files("selfreg").joinpath(
        "data/reference_values.csv").read_text()
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    out = {}
    for raw in lines[1:]:
        cells = dict(zip(header, raw.split(",")))
        key = (int(cells["condition_id"]), cells["family"],
               cells["parameter"])
        out[key] = cells
    return out


# ---------------------------------------------------------------------------
# Commands

def cmd_simulate(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        condition = cfg.conditions[0]
        seed = cfg.seed
    else:
        condition = SimulationCondition()
        seed = 0
    overrides = {}
    if args.decay_rate is not None and args.decay_time is not None:
        raise ValidationError("give --decay-rate or --decay-time, not both")
    if args.decay_rate is not None:
        overrides["decay_rate"] = args.decay_rate
    if args.decay_time is not None:
        if args.decay_time <= 0:
            raise ValidationError("--decay-time must be > 0")
        overrides["decay_rate"] = 1.0 / args.decay_time
    if args.gain is not None:
        overrides["gain"] = args.gain
    if args.equilibrium is not None:
        overrides["equilibrium"] = args.equilibrium
    if args.shape is not None:
        overrides["shape"] = ExcitationShape.from_label(args.shape)
    if args.n_obs is not None:
        overrides["n_obs"] = args.n_obs
    if args.n_indiv is not None:
        overrides["n_indiv"] = args.n_indiv
    if args.stn_pct is not None:
        overrides["stn_pct"] = args.stn_pct
    if args.sd_pct is not None:
        overrides["sd_pct"] = args.sd_pct
    if overrides:
        condition = replace(condition, **overrides)
    if args.seed is not None:
        seed = args.seed
    panel = generate_panel(condition, seed)
    n = write_panel(panel, args.out)
    print(f"wrote {n} rows ({len(panel)} individuals x "
          f"{condition.n_obs} observations) to {args.out}")
    return 0


def _analysis_outputs(out_dir: Path, panel: Panel, fit: FitResult,
                      search_trace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    reg = fit.regression

    rows = []
    scale = [("decay_rate", fit.decay_rate, fit.decay_rate_ci,
              "level")]
    if fit.gain_coef is not None:
        scale.append(("gain_coef", fit.gain_coef, fit.gain_coef_ci,
                      "excitation"))
    scale.append(("eq_coef", fit.eq_coef, fit.eq_coef_ci, "intercept"))
    for name, est, ci, col in scale:
        se = float(reg.se[reg.columns.index(col)])
        rows.append([name, est, se, ci[0], ci[1]])
    for name, est in (("decay_time", fit.decay_time), ("gain", fit.gain),
                      ("equilibrium", fit.equilibrium)):
        rows.append([name, est, "", "", ""])
    _write_csv(out_dir / "estimates.csv",
               ["parameter", "estimate", "se", "ci_low", "ci_high"], rows)

    rows = []
    for e in (fit.individual_estimates or []):
        rows.append([e.individual_id, e.decay_rate, e.decay_time, e.gain,
                     e.equilibrium, int(e.valid), e.note])
    _write_csv(out_dir / "individuals.csv",
               ["individual_id", "decay_rate", "decay_time", "gain",
                "equilibrium", "valid", "note"], rows)

    rows = []
    for s in panel:
        fixed = fit.fitted.get(s.individual_id)
        indiv = (fit.fitted_individual or {}).get(s.individual_id)
        for i in range(len(s.times)):
            rows.append([
                s.individual_id, float(s.times[i]), float(s.signal[i]),
                float(fixed[i]) if fixed is not None else "",
                float(indiv[i]) if indiv is not None else "",
            ])
    _write_csv(out_dir / "fitted.csv",
               ["individual_id", "time", "observed", "fitted",
                "fitted_individual"], rows)

    if search_trace is not None:
        _write_csv(out_dir / "trace.csv",
                   ["value", "r2", "error"],
                   [[p.value, p.r2, p.error] for p in search_trace])

    smoothing = (fit.config.embedding
                 if hasattr(fit.config, "embedding") else fit.config.spar)
    n_invalid = sum(0 if e.valid else 1
                    for e in (fit.individual_estimates or []))
    report = {
        "family": ("glla" if hasattr(fit.config, "embedding")
                   else "spline"),
        "smoothing": smoothing,
        "regression": reg.method,
        "homogeneous": fit.homogeneous,
        "r2_observed": fit.r2_observed,
        "converged": reg.converged,
        "iterations": reg.n_iter,
        "n_individuals": len(panel),
        "n_invalid_individuals": n_invalid,
        "residual_var": reg.resid_var,
        "note": fit.note,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2,
                                                    sort_keys=True) + "\n")


def cmd_analyze(args) -> int:
    panel = read_panel(args.input)
    family = _parse_methods([args.method])[0]
    if args.embedding is not None and family != "glla":
        raise ValidationError("--embedding only applies to --method glla")
    if args.spar is not None and family != "spline":
        raise ValidationError(
            "--spar only applies to --method spline (or fda)")
    if args.homogeneous and any(np.any(s.excitation != 0.0)
                                for s in panel):
        print("warning: panel has nonzero excitation but the fit ignores "
              "it (--homogeneous); expect a biased decay rate",
              file=sys.stderr)

    grid = None
    if args.grid:
        grid = [float(v) for v in args.grid.split(",") if v]
    hyper = args.embedding if family == "glla" else args.spar
    search_trace = None
    if hyper is not None:
        fit = two_step_fit(panel, make_config(family, hyper),
                           regression=args.regression,
                           homogeneous=args.homogeneous)
        chosen = hyper
    else:
        search = optimize_smoothing(panel, family,
                                    regression=args.regression,
                                    homogeneous=args.homogeneous,
                                    grid=grid)
        fit = search.fit
        search_trace = search.trace
        chosen = (search.chosen.embedding if family == "glla"
                  else search.chosen.spar)

    out_dir = Path(args.out_dir) if args.out_dir else \
        Path(str(args.input) + "_analysis")
    _analysis_outputs(out_dir, panel, fit, search_trace)
    print(f"family={family} smoothing={chosen:g} "
          f"decay_time={fit.decay_time:.6g} gain={fit.gain:.6g} "
          f"equilibrium={fit.equilibrium:.6g} "
          f"r2_observed={fit.r2_observed:.4f}")
    print(f"outputs in {out_dir}")
    return 0


_SUMMARY_HEADER = [
    "condition_id", "family", "regression", "homogeneous", "parameter",
    "bias_median", "bias_lo", "bias_hi", "n10", "coverage", "r2_indiv",
    "r2_fixed", "smoothing", "n_reps", "n_failed",
]

_REPLICATION_FIELDS = [
    "condition_id", "family", "rep", "seed", "smoothing", "converged",
    "error", "decay_rate", "decay_se", "decay_lo", "decay_hi",
    "gain_coef", "gain_se", "gain_lo", "gain_hi", "eq_coef", "eq_se",
    "eq_lo", "eq_hi", "decay_true", "gain_coef_true", "eq_coef_true",
    "r2_indiv", "r2_fixed", "r2_observed",
]


def _study_outputs(out_dir: Path, cfg: StudyConfig, result) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)

    meta = {
        "seed": cfg.seed,
        "n_reps": cfg.n_reps,
        "methods": cfg.methods,
        "regressions": cfg.regressions,
        "conditions": [condition_to_dict(c)
                       for c in cfg.expand_conditions()],
        "version": __version__,
    }
    (out_dir / "study_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n")

    rows = []
    for s in result.summaries:
        for p in s.params:
            rows.append([s.condition_id, s.family, s.regression,
                         int(s.homogeneous), p.name, p.median, p.lo, p.hi,
                         p.n10, p.coverage, s.r2_indiv_median,
                         s.r2_fixed_median, s.smoothing, s.n_reps,
                         s.n_failed])
    _write_csv(out_dir / "summary.csv", _SUMMARY_HEADER, rows)

    rows = []
    for run in result.runs:
        for r in run.records:
            row = [getattr(r, f) for f in _REPLICATION_FIELDS]
            row[5] = int(r.converged)
            rows.append(row)
    _write_csv(out_dir / "replications.csv", _REPLICATION_FIELDS, rows)

    rows = []
    for run in result.runs:
        if run.search is None:
            continue
        chosen = run.records[0].smoothing if run.records else math.nan
        for p in run.search.trace:
            rows.append([run.condition.condition_id, run.family,
                         run.condition.regression,
                         int(run.condition.homogeneous), p.value, p.r2,
                         int(p.value == chosen), p.error])
    _write_csv(out_dir / "traces.csv",
               ["condition_id", "family", "regression", "homogeneous",
                "value", "r2", "chosen", "error"], rows)

    _write_report_md(out_dir, result)


def _fmt_triplet(median, lo, hi) -> str:
    if any(isinstance(v, float) and math.isnan(v)
           for v in (median, lo, hi)):
        return "n/a"
    return f"{median:.0f} [{lo:.0f};{hi:.0f}]"


def _write_report_md(out_dir: Path, result) -> None:
    published = _load_reference_values()
    lines = ["# Simulation study report", ""]
    if result.errors:
        lines.append("## Failed cells")
        for key, msg in sorted(result.errors.items()):
            lines.append(f"- condition {key[0]}, family {key[1]}, "
                         f"regression {key[2]}: {msg}")
        lines.append("")
    by_cond: dict[int, list] = {}
    for s in result.summaries:
        by_cond.setdefault(s.condition_id, []).append(s)
    for cid in sorted(by_cond):
        lines.append(f"## Condition {cid}")
        lines.append("")
        lines.append("| family | regression | parameter | bias ours | "
                     "bias published | N10 ours | N10 pub | cov ours | "
                     "cov pub |")
        lines.append("|---|---|---|---|---|---|---|---|---|")
        for s in sorted(by_cond[cid], key=lambda s: (s.family,
                                                     s.regression)):
            for p in s.params:
                ref = published.get((cid, s.family, p.name))
                ours = _fmt_triplet(p.median, p.lo, p.hi)
                if ref:
                    pub = (f"{ref['bias_median']} [{ref['bias_lo']};"
                           f"{ref['bias_hi']}]")
                    pub_n10, pub_cov = ref["n10"], ref["coverage"]
                else:
                    pub = pub_n10 = pub_cov = "-"
                lines.append(
                    f"| {s.family} | {s.regression} | {p.name} | {ours} "
                    f"| {pub} | {p.n10:.1f} | {pub_n10} | "
                    f"{p.coverage:.1f} | {pub_cov} |"
                )
            lines.append(
                f"| {s.family} | {s.regression} | r2/smoothing | "
                f"r2_indiv={s.r2_indiv_median:.2f} "
                f"r2_fixed={s.r2_fixed_median:.2f} | - | "
                f"smoothing={s.smoothing:g} | - | "
                f"failed={s.n_failed}/{s.n_reps} | - |"
            )
        lines.append("")
    lines.append("Published values are the benchmark statistics shipped "
                 "with this package (data/reference_values.csv), not "
                 "recomputed truth.")
    (out_dir / "report.md").write_text("\n".join(lines) + "\n")


def cmd_study(args) -> int:
    cfg = load_config(args.config) if args.config else StudyConfig()
    if args.n_reps is not None:
        if args.n_reps < 1:
            raise ValidationError("--n-reps must be >= 1")
        cfg.n_reps = args.n_reps
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.methods is not None:
        cfg.methods = _parse_methods(args.methods)
    if args.regressions is not None:
        cfg.regressions = _parse_regressions(args.regressions)
    out_dir = Path(args.out_dir or cfg.out_dir or "study_output")

    conditions = cfg.expand_conditions()
    result = run_study(conditions, families=tuple(cfg.methods),
                       n_reps=cfg.n_reps, base_seed=cfg.seed,
                       workers=cfg.workers, grids=cfg.grids())
    _study_outputs(out_dir, cfg, result)
    print(f"{len(result.summaries)} condition cells summarized "
          f"({len(result.errors)} failed) in {out_dir}")
    for key, msg in sorted(result.errors.items()):
        print(f"failed: condition {key[0]} {key[1]}/{key[2]}: {msg}",
              file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    study_dir = Path(args.study_dir)
    expected = ["study_meta.json", "summary.csv", "replications.csv",
                "traces.csv"]
    missing = [f for f in expected if not (study_dir / f).exists()]
    if missing:
        raise ValidationError(
            f"study directory {study_dir} is missing {missing}; expected "
            f"files: {expected} (run the study command first)"
        )
    out_dir = Path(args.out_dir) if args.out_dir else study_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    meta = json.loads((study_dir / "study_meta.json").read_text())
    conditions = {d["condition_id"]: condition_from_dict(d)
                  for d in meta["conditions"]}

    # (i) R2-vs-smoothing traces, one row per evaluated grid point.
    trace_lines = (study_dir / "traces.csv").read_text().strip() \
        .splitlines()
    (out_dir / "trace_r2.csv").write_text(
        "\n".join(trace_lines) + "\n")

    # (ii) Per-replication bias distributions in long format.
    rep_lines = (study_dir / "replications.csv").read_text().strip() \
        .splitlines()
    header = rep_lines[0].split(",")
    idx = {name: i for i, name in enumerate(header)}
    rows = []
    for raw in rep_lines[1:]:
        cells = raw.split(",")
        if cells[idx["error"]]:
            continue
        for param, tcol in (("decay_rate", "decay_true"),
                            ("gain_coef", "gain_coef_true"),
                            ("eq_coef", "eq_coef_true")):
            est = float(cells[idx[param]])
            truth = float(cells[idx[tcol]])
            if math.isnan(est):
                continue
            bias = abs(est) if truth == 0.0 else \
                100.0 * (est - truth) / truth
            rows.append([cells[idx["condition_id"]],
                         cells[idx["family"]], param,
                         cells[idx["rep"]], bias])
    _write_csv(out_dir / "bias_distributions.csv",
               ["condition_id", "family", "parameter", "rep", "bias"],
               rows)

    # (iii) Example fitted-vs-observed trajectories: refit the first
    # replication of each cell at its recorded smoothing.
    sum_lines = (study_dir / "summary.csv").read_text().strip() \
        .splitlines()
    sh = {name: i for i, name in enumerate(sum_lines[0].split(","))}
    cells_seen = {}
    for raw in sum_lines[1:]:
        c = raw.split(",")
        key = (int(c[sh["condition_id"]]), c[sh["family"]],
               c[sh["regression"]], c[sh["homogeneous"]] == "1")
        cells_seen.setdefault(key, float(c[sh["smoothing"]]))
    rows = []
    for (cid, family, regression, homog), smoothing in \
            sorted(cells_seen.items()):
        cond = conditions.get(cid)
        if cond is None or math.isnan(smoothing):
            continue
        cond = replace(cond, regression=regression, homogeneous=homog)
        panel = generate_panel(cond,
                               replication_seed(meta["seed"], cid, 0))
        try:
            fit = two_step_fit(panel, make_config(family, smoothing),
                               regression=regression, homogeneous=homog)
        except SelfRegError as exc:
            print(f"skipping example fit for condition {cid} {family}: "
                  f"{exc}", file=sys.stderr)
            continue
        for s in list(panel)[:5]:
            fixed = fit.fitted.get(s.individual_id)
            if fixed is None:
                continue
            for i in range(len(s.times)):
                rows.append([cid, family, s.individual_id,
                             float(s.times[i]), float(s.signal[i]),
                             float(fixed[i])])
    _write_csv(out_dir / "example_fits.csv",
               ["condition_id", "family", "individual_id", "time",
                "observed", "fitted"], rows)
    print(f"report data in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfreg",
        description="Identify decay time, gain and equilibrium of "
                    "self-regulated signals from panel data.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate",
                       help="generate a benchmark panel as CSV")
    p.add_argument("--config", help="JSON study config; its first "
                   "condition seeds the defaults")
    p.add_argument("--decay-rate", type=float)
    p.add_argument("--decay-time", type=float)
    p.add_argument("--gain", type=float)
    p.add_argument("--equilibrium", type=float)
    p.add_argument("--shape", choices=["two_steps", "one_step", "pulses3",
                                       "pulses5", "pulses10"])
    p.add_argument("--n-obs", type=int)
    p.add_argument("--n-indiv", type=int)
    p.add_argument("--stn-pct", type=float)
    p.add_argument("--sd-pct", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="fit the two-step model to a "
                                       "panel CSV")
    p.add_argument("input", help="panel CSV path")
    p.add_argument("--method", required=True,
                   help="derivative family: glla, spline (alias fda)")
    p.add_argument("--embedding", type=int,
                   help="window length for glla; searched when omitted")
    p.add_argument("--spar", type=float,
                   help="smoothing knob in [0,1] for spline; searched "
                        "when omitted")
    p.add_argument("--regression", default="lmm",
                   choices=["lmm", "ols", "gee"])
    p.add_argument("--homogeneous", action="store_true",
                   help="drop the excitation term from the fit")
    p.add_argument("--grid", help="comma-separated candidate smoothing "
                                  "values for the search")
    p.add_argument("--out-dir", help="output directory (default: "
                                     "<input>_analysis)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("study", help="run the Monte Carlo benchmark")
    p.add_argument("--config", help="JSON study config path")
    p.add_argument("--n-reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--methods", help="comma list: glla, spline/fda")
    p.add_argument("--regressions", help="comma list: lmm, ols, gee "
                                         "(cross-product override)")
    p.add_argument("--out-dir", help="output directory")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("report", help="emit plot-ready data from a "
                                      "study directory")
    p.add_argument("study_dir", help="directory written by the study "
                                     "command")
    p.add_argument("--out-dir", help="output directory (default: "
                                     "<study_dir>/report)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 3
    except SelfRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

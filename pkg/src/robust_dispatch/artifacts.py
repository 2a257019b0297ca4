"""Run artifacts: columnar CSV files and a JSON summary.

Every CSV starts with a ``# format_version=N`` line; the summary carries the
same key.  Nothing time- or host-dependent is written, so a run repeated
with the same inputs produces identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .controller import RunLog, ScenarioTable, metrics, scenario_table, voltage_histogram
from .errors import DataError, IncompatibleRunsError
from .feeder import FORMAT_VERSION, FeederModel, TimeSeries, _model_to_dict
from .tightening import bounds_rows

SCENARIO_COLUMNS = ("step", "losses", "served_demand", "net_demand", "violations", "samples", "imbalance", "v_low", "v_high")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# format_version={FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# format_version="):
        raise DataError(f"{path}: missing format_version header")
    version = lines[0].split("=", 1)[1].split(",")[0].strip()
    if version != str(FORMAT_VERSION):
        raise DataError(f"{path}: unsupported format_version {version}")
    rows = list(csv.reader(lines[1:]))
    return rows[0], rows[1:]


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def feeder_digest(model: FeederModel) -> str:
    text = json.dumps(_model_to_dict(model), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def series_digest(series: TimeSeries) -> str:
    h = hashlib.sha256(repr(series.dt_hours).encode())
    for name, table in (("demand", series.demand), ("solar", series.solar)):
        for key in sorted(table):
            h.update(f"{name}:{key[0]}.{key[1]}".encode())
            h.update(np.ascontiguousarray(table[key]).tobytes())
    return h.hexdigest()


def run_summary(log: RunLog, extra: dict | None = None) -> dict:
    cfg = log.config
    stats = metrics(log)
    doc = {
        "format_version": FORMAT_VERSION,
        "mode": cfg.mode,
        "feeder": log.model.name,
        "feeder_sha256": feeder_digest(log.model),
        "series_sha256": series_digest(log.forecast),
        "seed": cfg.seed,
        "scenarios": cfg.scenarios,
        "steps": cfg.steps,
        "horizon": cfg.horizon,
        "dt_hours": cfg.dt_hours,
        "robust": asdict(cfg.robust),
        "solver": asdict(cfg.solver),
        "statistics": stats.summary(),
        "planned_losses": float(log.planned_losses.sum()),
        "planned_slack": float(log.slack_totals.sum()),
        "statuses": sorted({s for r in log.records for s in r.socp_status}),
    }
    if extra:
        doc.update(extra)
    return doc


def write_run(log: RunLog, outdir, extra: dict | None = None) -> Path:
    """Write every artifact of a run into ``outdir``; returns the summary path."""
    out = Path(outdir)
    (out / "scenarios").mkdir(parents=True, exist_ok=True)
    model = log.model
    d = log.dispatch
    rows = []
    for t in range(log.steps):
        for j, der in enumerate(model.batteries):
            rows.append((t, der.id, "battery", d.p_c[t, j], d.p_d[t, j], d.q_b[t, j], d.soc[t + 1, j]))
        for j, der in enumerate(model.solars):
            rows.append((t, der.id, "solar", d.p_s[t, j], 0.0, d.q_s[t, j], 0.0))
    write_csv(out / "dispatch.csv", ("step", "der", "device", "p_charge_or_solar", "p_discharge", "q", "soc_after"), rows)

    rows = []
    for r in log.records:
        hb = r.horizon_bounds if r.horizon_bounds is not None else r.bounds
        for k in range(hb.horizon):
            lead = int(hb.leads[k]) if len(hb.leads) else 0
            for step, name, family, lo, hi, lam in bounds_rows(model, hb.step(k), r.t + k):
                rows.append((r.t, k, lead, name, family, lo, hi, lam))
    write_csv(out / "bounds.csv", ("step", "offset", "lead", "element", "family", "lower", "upper", "margin"), rows)

    rows = []
    for r in log.records:
        dg = r.point.diagnostics()
        rows.append(
            (r.t, r.lead, "+".join(r.socp_status), dg["iterations"], dg["corrections"], dg["converged"],
             dg["rank1_gap"], dg["losses"], dg["slack_total"], dg["socp_bound"])
        )
    write_csv(
        out / "recovery.csv",
        ("step", "lead", "socp_status", "iterations", "corrections", "converged", "rank1_gap", "losses", "slack_total", "socp_bound"),
        rows,
    )

    edges, counts = voltage_histogram(log)
    write_csv(out / "histogram.csv", ("bin_low", "bin_high", "count"), zip(edges[:-1], edges[1:], counts))

    table = scenario_table(log)
    for s in range(log.n_scenarios):
        rows = [
            (t, table.losses[s, t], table.served_demand[s, t], table.net_demand[s, t], table.violations[s, t],
             table.samples[s, t], table.imbalance[s, t], table.v_low[s, t], table.v_high[s, t])
            for t in range(log.steps)
        ]
        write_csv(out / "scenarios" / f"scenario_{s:03d}.csv", SCENARIO_COLUMNS, rows)

    summary = out / "summary.json"
    write_json(summary, run_summary(log, extra))
    return summary


def read_run(outdir) -> tuple[dict, ScenarioTable]:
    """Summary and per-scenario table of a run written by ``write_run``."""
    out = Path(outdir)
    path = out / "summary.json"
    if not path.exists():
        raise DataError(f"{out}: no summary.json; not a run directory")
    summary = json.loads(path.read_text())
    if summary.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {summary.get('format_version')!r}")
    n, steps = summary["scenarios"], summary["steps"]
    cols = {c: np.full((n, steps), np.nan) for c in SCENARIO_COLUMNS[1:]}
    for s in range(n):
        header, rows = read_csv(out / "scenarios" / f"scenario_{s:03d}.csv")
        if tuple(header) != SCENARIO_COLUMNS or len(rows) != steps:
            raise DataError(f"{out}: scenario {s} file is malformed")
        for t, row in enumerate(rows):
            for c, v in zip(SCENARIO_COLUMNS[1:], row[1:]):
                cols[c][s, t] = float(v)
    aborted = ~np.isfinite(cols["losses"]).all(axis=1)
    table = ScenarioTable(
        losses=cols["losses"],
        served_demand=cols["served_demand"],
        violations=cols["violations"].astype(int),
        samples=cols["samples"].astype(int),
        imbalance=cols["imbalance"],
        v_low=cols["v_low"],
        v_high=cols["v_high"],
        aborted=aborted,
    )
    return summary, table


def check_pairable(a: dict, b: dict) -> None:
    for key in ("feeder_sha256", "series_sha256", "seed", "scenarios", "steps"):
        if a.get(key) != b.get(key):
            raise IncompatibleRunsError(f"runs differ in {key}: {a.get(key)!r} vs {b.get(key)!r}")

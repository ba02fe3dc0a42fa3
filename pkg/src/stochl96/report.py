"""Experiment records and plot-ready report files."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .evaluation import ClimateResult, MetricSeries

METRIC_NOTES = {
    "mse": "mean over members of squared error",
    "crps": "ensemble CRPS",
    "error": "squared ensemble-mean error; reliable ensembles give (1+1/M) s^2",
    "spread": "ensemble variance with 1/M normalisation; reliable ensembles give (1-1/M) s^2",
}
SUMMARY_LEADS = (0.5, 1.0, 2.0)


@dataclass
class ForecastRecord:
    case: str
    perturbed: bool
    series: dict[str, MetricSeries]

    def to_json(self) -> dict:
        return {
            "type": "forecast", "case": self.case, "perturbed": self.perturbed,
            "models": {name: {"members": s.members, "diverged": s.diverged,
                              "leads": s.leads.tolist(),
                              **{m: getattr(s, m).tolist() for m in MetricSeries.METRICS}}
                       for name, s in self.series.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "ForecastRecord":
        series = {name: MetricSeries(np.asarray(v["leads"]), *(np.asarray(v[m]) for m in MetricSeries.METRICS),
                                     members=v["members"], diverged=v["diverged"])
                  for name, v in d["models"].items()}
        return cls(d["case"], d["perturbed"], series)


@dataclass
class ClimateRecord:
    case: str
    length_mtu: float
    distances: dict = field(default_factory=dict)  # model -> {"ks", "hellinger"}
    edges: list = field(default_factory=list)
    densities: dict = field(default_factory=dict)  # includes "truth"

    @classmethod
    def of(cls, case: str, length_mtu: float, res: ClimateResult) -> "ClimateRecord":
        return cls(case, length_mtu,
                   {k: {"ks": d.ks, "hellinger": d.hellinger} for k, d in res.distances.items()},
                   res.truth.edges.tolist(),
                   {"truth": res.truth.density.tolist(),
                    **{k: h.density.tolist() for k, h in res.models.items()}})

    def to_json(self) -> dict:
        return {"type": "climate", "case": self.case, "length_mtu": self.length_mtu,
                "distances": self.distances, "edges": self.edges, "densities": self.densities}

    @classmethod
    def from_json(cls, d: dict) -> "ClimateRecord":
        return cls(d["case"], d["length_mtu"], d["distances"], d["edges"], d["densities"])


def save_record(record, path) -> None:
    with open(path, "w") as fh:
        json.dump(record.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_record(path):
    with open(path) as fh:
        d = json.load(fh)
    kinds = {"forecast": ForecastRecord, "climate": ClimateRecord}
    if d.get("type") not in kinds:
        raise ValueError(f"{path}: not an experiment record")
    return kinds[d["type"]].from_json(d)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_report(records, out_dir) -> dict:
    """One CSV per metric and a ``summary.json``; returns the summary."""
    os.makedirs(out_dir, exist_ok=True)
    forecasts = [r for r in records if isinstance(r, ForecastRecord)]
    climates = [r for r in records if isinstance(r, ClimateRecord)]
    summary: dict = {}
    if forecasts:
        for metric in MetricSeries.METRICS:
            path = os.path.join(out_dir, f"{metric}.csv")
            with open(path, "w", newline="") as fh:
                fh.write(f"# {metric}: {METRIC_NOTES[metric]}\n")
                w = csv.writer(fh)
                w.writerow(["lead_mtu", "metric", "value", "model", "case"])
                for rec in forecasts:
                    tag = "perturbed" if rec.perturbed else "perfect"
                    for name, s in rec.series.items():
                        for lead, v in zip(s.leads, getattr(s, metric)):
                            w.writerow([_fmt(lead), metric, _fmt(v), name, f"{rec.case}/{tag}"])
        fc = summary.setdefault("forecast", {})
        for rec in forecasts:
            tag = "perturbed" if rec.perturbed else "perfect"
            fc[f"{rec.case}/{tag}"] = {
                name: {f"{m}@{lead:g}": s.at(lead)[m] for lead in SUMMARY_LEADS
                       if lead <= s.leads[-1] + 1e-12 for m in MetricSeries.METRICS}
                for name, s in rec.series.items()}
    if climates:
        summary["climate"] = {rec.case: rec.distances for rec in climates}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary

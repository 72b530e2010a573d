"""Deterministic JSON and CSV reports of a simulation trace."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .energy import EnergyModel, energy_report, energy_to_date
from .elastic import class_scores, confidence, fcr_latency, fcr_stable_latency, predict


def _core_counters(trace, mapping) -> dict:
    out: dict = {}
    for j, c in enumerate(trace.layer_counters):
        core = "%d,%d" % mapping.core_of(j)
        acc = out.setdefault(core, {k: 0 for k in c.as_dict()})
        for k, v in c.as_dict().items():
            acc[k] += v
    return out


def build_report(trace, mapping, model: EnergyModel = EnergyModel(), label=None) -> dict:
    cfg = trace.config
    final_scores = class_scores(trace.snapshot(trace.horizon))
    rep = {
        "config": {
            "pipeline": cfg.pipeline.value, "product": cfg.product, "aer": cfg.aer,
            "routing": cfg.routing, "flit_bits": cfg.flit_bits,
            "link_bandwidth": cfg.link_bandwidth,
            "injection_multiplier": cfg.injection_multiplier, "seed": cfg.seed,
        },
        "time_steps": trace.time_steps,
        "stable_time_step": trace.t_stable,
        "latency_cycles": trace.cycles,
        "first_response_cycle": min(trace.final_output_cycles) if trace.final_output_cycles
        else None,
        "step_cycles": list(trace.step_cycles),
        "cores_used": trace.cores,
        "noc": dict(trace.noc),
        "link_flits": {"%d,%d->%d,%d" % (a + b): n
                       for (a, b), n in sorted(trace.link_flits.items())},
        "layers": [dict(c.as_dict(), layer=j) for j, c in enumerate(trace.layer_counters)],
        "cores": _core_counters(trace, mapping),
        "energy": energy_report(trace, model),
        "output": {
            "tracers": trace.tracers[trace.final_layer].tolist(),
            "scores": final_scores.tolist(),
            "prediction": predict(final_scores),
        },
    }
    if label is not None:
        rep["output"]["label"] = label
        rep["fcr_cycle"] = fcr_latency(trace, label)
        rep["fcr_stable_cycle"] = fcr_stable_latency(trace, label)
    return rep


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def steps_csv(trace, model: EnergyModel = EnergyModel()) -> str:
    """One row per time-step: completion cycle, prediction and energy to date."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_step", "cycle", "energy_to_date", "prediction", "confidence", "flit_hops"])
    energies = energy_to_date(trace, model)
    for t in range(1, len(trace.step_cycles) + 1):
        scores = class_scores(trace.snapshot(t))
        pred = predict(scores)
        w.writerow([t, trace.cycle_of(t), "%.6f" % energies[t - 1],
                    "" if pred is None else pred, "%.6f" % confidence(scores),
                    trace.step_totals[t - 1]["flit_hops"]])
    return buf.getvalue()


def write_reports(trace, mapping, out_dir, model: EnergyModel = EnergyModel(),
                  label=None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jp, cp = out / "report.json", out / "steps.csv"
    jp.write_text(report_json(build_report(trace, mapping, model, label)))
    cp.write_text(steps_csv(trace, model))
    return jp, cp

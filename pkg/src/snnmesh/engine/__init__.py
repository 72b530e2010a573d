"""Cycle-level simulation, energy accounting, elastic inference and reports."""
from .elastic import (ElasticConfig, ElasticResult, class_scores, confidence, elastic_from_trace,
                      elastic_run, fcr_latency, fcr_stable_latency, mismatch_rate,
                      predict, predictions)
from .energy import EnergyModel, compute_energy, energy_report, energy_to_date
from .report import build_report, report_json, steps_csv, write_reports
from .simulator import SimConfig, SimTrace, Simulator, run_inference

__all__ = [
    "ElasticConfig", "ElasticResult", "class_scores", "confidence", "elastic_from_trace",
    "elastic_run", "fcr_latency", "fcr_stable_latency", "mismatch_rate", "predict",
    "predictions", "EnergyModel", "compute_energy",
    "energy_report", "energy_to_date", "build_report", "report_json", "steps_csv",
    "write_reports", "SimConfig", "SimTrace", "Simulator", "run_inference",
]

"""Energy estimate from access counters (arbitrary units, per-access costs)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import ValidationError
from ..pe import AccessCounters

REFERENCE_FLIT_BITS = 256


@dataclass(frozen=True)
class EnergyModel:
    adder_op: float = 0.5
    weight_row_read: float = 4.0
    membrane_row_read: float = 12.0
    membrane_row_write: float = 12.0
    tracer_access: float = 4.0
    fire_eval: float = 0.2
    fifo_access: float = 2.0
    flit_per_hop: float = 8.0     # for a 256-bit flit; scaled by width
    leakage_per_core_cycle: float = 0.01

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValidationError(f"energy cost {k} must be >= 0", field=k)

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyModel":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown energy costs {sorted(unknown)}", field="energy")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def compute_energy(counters: AccessCounters | dict, noc: dict | None = None, cycles: int = 0,
                   cores: int = 1, model: EnergyModel = EnergyModel()) -> dict:
    c = counters.as_dict() if isinstance(counters, AccessCounters) else counters
    noc = noc or {}
    bits = noc.get("flit_bits", REFERENCE_FLIT_BITS)
    parts = {
        "adder": c["adder_ops"] * model.adder_op,
        "weight_buffer": c["weight_row_reads"] * model.weight_row_read,
        "membrane_buffer": c["membrane_row_reads"] * model.membrane_row_read
        + c["membrane_row_writes"] * model.membrane_row_write,
        "tracer_buffer": (c["tracer_row_reads"] + c["tracer_row_writes"]) * model.tracer_access,
        "fire": c["fire_evals"] * model.fire_eval,
        "router_fifo": noc.get("fifo_accesses", 0) * model.fifo_access,
        "links": noc.get("flit_hops", 0) * model.flit_per_hop * bits / REFERENCE_FLIT_BITS,
        "leakage": cycles * cores * model.leakage_per_core_cycle,
    }
    return parts


def energy_report(trace, model: EnergyModel = EnergyModel()) -> dict:
    """Total energy with a per-component breakdown and percentages."""
    total_counters = AccessCounters()
    for c in trace.layer_counters:
        total_counters += c
    parts = compute_energy(total_counters, trace.noc, trace.cycles, trace.cores, model)
    total = sum(parts.values())
    return {
        "total": total,
        "breakdown": parts,
        "percent": {k: (100.0 * v / total if total else 0.0) for k, v in parts.items()},
        "model": model.to_dict(),
    }


def energy_to_date(trace, model: EnergyModel = EnergyModel()) -> list[float]:
    """Cumulative energy when each time-step's final output was complete."""
    bits = trace.noc.get("flit_bits", REFERENCE_FLIT_BITS)
    out = []
    for cyc, tot in zip(trace.step_cycles, trace.step_totals):
        noc = dict(tot, flit_bits=bits)
        out.append(sum(compute_energy(tot, noc, cyc, trace.cores, model).values()))
    return out

"""Parameter sweeps producing result tables.

A sweep walks the cartesian product of the listed protocol parameters (the
swept one innermost) and evaluates each point with the analytic engine, the
Monte Carlo engine, or both. Rows come back in grid order regardless of how
many worker threads evaluated them.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import TextIO

from . import analytics, montecarlo
from .analytics import ProtocolParams
from .montecarlo import SimulationConfig

SWEEPABLE = ("sigma", "q_threshold", "theta", "n_qcp")
ENGINES = ("analytic", "montecarlo", "both")


class SweepPointError(RuntimeError):
    """An engine failed at one grid point; the original error is ``__cause__``."""

    def __init__(self, point: dict, cause: BaseException):
        self.point = point
        desc = ", ".join(f"{k}={v:g}" for k, v in point.items())
        super().__init__(f"at grid point ({desc}): {cause}")


@dataclass(frozen=True)
class SweepSpec:
    """What to sweep and how to evaluate it.

    ``param`` is swept over ``grid``. Every name in ``SWEEPABLE`` other than
    ``param`` may additionally be listed in ``axes`` to loop over several
    values; anything not listed comes from ``baseline``.
    """

    param: str
    grid: tuple
    baseline: ProtocolParams = ProtocolParams()
    engine: str = "analytic"
    axes: dict = field(default_factory=dict)
    n_trials: int = 1_000_000
    seed: int = 0
    phase_model: str = "iid"
    uproduct: bool = False
    shards: int = 1
    jobs: int = 1

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.param!r}; choose from {SWEEPABLE}")
        if len(self.grid) == 0:
            raise ValueError("sweep grid is empty")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.uses_montecarlo and self.n_trials < 1:
            raise ValueError(f"Monte Carlo needs at least one trial, got {self.n_trials}")
        for name, values in self.axes.items():
            if name not in SWEEPABLE or name == self.param:
                raise ValueError(f"invalid sweep axis {name!r}")
            if len(values) == 0:
                raise ValueError(f"axis {name!r} is empty")

    @property
    def uses_analytic(self) -> bool:
        return self.engine in ("analytic", "both")

    @property
    def uses_montecarlo(self) -> bool:
        return self.engine in ("montecarlo", "both")

    def context_names(self) -> list[str]:
        return [name for name in SWEEPABLE if name != self.param]

    def columns(self) -> list[str]:
        cols = [self.param, *self.context_names(), "v_in"]
        if self.uses_analytic:
            cols += ["v_out", "p_success"]
        if self.uses_montecarlo:
            cols += ["v_out_hat", "se_v", "p_hat", "se_p", "n_accepted"]
        if self.engine == "both":
            cols += ["z_v", "z_p"]
        if self.uproduct:
            if self.uses_analytic:
                cols.append("u_product")
            if self.uses_montecarlo:
                cols += ["u_hat", "se_u"]
        return cols

    def points(self) -> list[ProtocolParams]:
        outer = [name for name in SWEEPABLE if name in self.axes]
        combos = itertools.product(*(self.axes[name] for name in outer), self.grid)
        pts = []
        for combo in combos:
            values = dict(zip(outer + [self.param], combo))
            if "n_qcp" in values:
                values["n_qcp"] = int(values["n_qcp"])
            pts.append(replace(self.baseline, **values))
        return pts


def evaluate_point(spec: SweepSpec, params: ProtocolParams) -> dict:
    row = {spec.param: getattr(params, spec.param)}
    for name in spec.context_names():
        row[name] = getattr(params, name)
    row["v_in"] = analytics.v_in_closed_form(params)
    try:
        if spec.uses_analytic:
            res = analytics.v_out_qcp(params)
            row["v_out"] = res.v_out
            row["p_success"] = res.p_success
        if spec.uses_montecarlo:
            cfg = SimulationConfig(
                params,
                n_trials=spec.n_trials,
                phase_model=spec.phase_model,
                seed=spec.seed,
                shards=spec.shards,
            )
            est = montecarlo.run_qcp(cfg)
            row.update(
                v_out_hat=est.v_out_hat,
                se_v=est.se_v,
                p_hat=est.p_hat,
                se_p=est.se_p,
                n_accepted=est.n_accepted,
            )
            if spec.engine == "both":
                row["z_v"] = _z(est.v_out_hat, row["v_out"], est.se_v)
                row["z_p"] = _z(est.p_hat, row["p_success"], est.se_p)
        if spec.uproduct:
            if spec.uses_analytic:
                row["u_product"] = analytics.uncertainty_product(params)
            if spec.uses_montecarlo:
                row["u_hat"], row["se_u"] = montecarlo.uncertainty_product(cfg)
    except (analytics.NumericalConvergenceError, ValueError) as exc:
        point = {k: float(getattr(params, k)) for k in SWEEPABLE}
        raise SweepPointError(point, exc) from exc
    return row


def _z(estimate: float, reference: float, se: float) -> float:
    if not (se > 0):
        return math.nan
    return (estimate - reference) / se


def sweep(spec: SweepSpec) -> list[dict]:
    """Evaluate every grid point; rows are returned in grid order."""
    pts = spec.points()
    if spec.jobs > 1:
        with ThreadPoolExecutor(spec.jobs) as pool:
            return list(pool.map(lambda p: evaluate_point(spec, p), pts))
    return [evaluate_point(spec, p) for p in pts]


def self_check_failures(rows: list[dict], limit: float = 3.0) -> list[dict]:
    """Rows of a ``both`` run whose MC estimates sit more than ``limit`` se off."""
    bad = []
    for row in rows:
        z = [abs(row.get(k, 0.0)) for k in ("z_v", "z_p")]
        if any(v > limit for v in z if not math.isnan(v)):
            bad.append(row)
    return bad


def format_value(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.10g}"
    return str(value)


def write_table(
    rows: list[dict], columns: list[str], fh: TextIO, header: dict | None = None
) -> None:
    """CSV with an optional ``# key=value`` preamble."""
    for key, value in (header or {}).items():
        fh.write(f"# {key}={format_value(value)}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c, "")) for c in columns])

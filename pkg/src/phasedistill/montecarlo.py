"""Monte Carlo simulation of the distillation protocol.

Each trial draws the two phase shifts, computes the Gaussian moments of
``(q1, q2)`` through :mod:`phasedistill.gaussian_core`, samples a homodyne
pair, and accepts the trial if ``|q1| < Q``. Nothing here calls the
quadrature formulas in :mod:`phasedistill.analytics`, so the two engines
check each other.

Phase models
------------
``"iid"``
    Independent shifts for every sample.
``"bandlimited"``
    Each channel carries its own band-limited process (see
    :func:`phasedistill.phase_noise.sample_bandlimited`); consecutive samples
    are strongly correlated.
``"held"``
    One phase pair per trial, held fixed over all ``n_qcp`` trigger samples of
    that trial. This is the perfectly-correlated limit of channel probing.

Sharding
--------
``n_trials`` is split into ``shards`` contiguous pieces, each with its own
Philox streams keyed by ``(seed, shard)``. Accepted samples are gathered in
shard order, so results depend only on ``(seed, shards)`` and not on how
many workers ran them.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analytics import ProtocolParams
from .gaussian_core import protocol_moments
from .phase_noise import PhaseDistribution, PhaseProcessConfig, sample_bandlimited, sample_iid
from .rng import (
    STREAM_BOOTSTRAP,
    STREAM_HOMODYNE,
    STREAM_PHASE,
    STREAM_TRIGGER_ANGLE,
    make_rng,
)

log = logging.getLogger(__name__)

PHASE_MODELS = ("iid", "bandlimited", "held")
TRIGGER_MODES = ("fixed_angle", "randomized_angle")
DEFAULT_BOOTSTRAP = 200


@dataclass(frozen=True)
class SimulationConfig:
    params: ProtocolParams
    n_trials: int = 1_000_000
    phase_model: str = "iid"
    process: PhaseProcessConfig = field(default_factory=PhaseProcessConfig)
    trigger_mode: str = "fixed_angle"
    seed: int = 0
    psi: float = 0.0
    shards: int = 1
    n_bootstrap: int = DEFAULT_BOOTSTRAP
    workers: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.phase_model not in PHASE_MODELS:
            raise ValueError(f"phase_model must be one of {PHASE_MODELS}, got {self.phase_model!r}")
        if self.trigger_mode not in TRIGGER_MODES:
            raise ValueError(
                f"trigger_mode must be one of {TRIGGER_MODES}, got {self.trigger_mode!r}"
            )
        if self.shards < 1 or self.shards > self.n_trials:
            raise ValueError(f"shards must lie in [1, n_trials], got {self.shards}")
        if self.n_bootstrap < 0:
            raise ValueError("n_bootstrap must be >= 0")


@dataclass(frozen=True)
class DistillationEstimate:
    """Sample statistics of the accepted output quadrature.

    ``n_trials`` counts candidate trigger events (for sliding channel probing
    this is the number of complete windows). When nothing was accepted the
    estimate is *empty*: ``v_out_hat`` and ``se_v`` are NaN and
    :attr:`is_empty` is true.
    """

    v_out_hat: float
    p_hat: float
    n_accepted: int
    n_trials: int
    se_v: float
    se_p: float

    @property
    def is_empty(self) -> bool:
        return self.n_accepted == 0


def simulate_trial(params: ProtocolParams, phi1, phi2, rng: np.random.Generator, theta=None, psi=0.0):
    """Sample homodyne outcomes ``(q1, q2)`` for given phase shifts.

    All angle arguments broadcast; one outcome pair is drawn per element.
    ``theta`` defaults to ``params.theta``.

    Returns
    -------
    q1, q2 : ndarray
        Trigger and verified quadrature values.
    accepted : ndarray of bool
        ``|q1| < Q`` (strict).
    """
    q1, q2 = _sample_pair(params, phi1, phi2, rng, theta, psi)
    return q1, q2, np.abs(q1) < params.q_threshold


def _sample_pair(params, phi1, phi2, rng, theta=None, psi=0.0):
    theta = params.theta if theta is None else theta
    m = protocol_moments(params.state, phi1, phi2, theta, psi, eta=params.eta)
    z = rng.standard_normal((2,) + np.shape(m.a))
    # Cholesky factor of [[a, c], [c, b]]
    root_a = np.sqrt(m.a)
    q1 = root_a * z[0]
    q2 = (m.c / root_a) * z[0] + np.sqrt(np.maximum(m.d / m.a, 0.0)) * z[1]
    return q1, q2


def _phase_stream(config: SimulationConfig, shard: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    sigma = config.params.sigma
    rng1 = make_rng(config.seed, STREAM_PHASE, shard, 1)
    rng2 = make_rng(config.seed, STREAM_PHASE, shard, 2)
    if config.phase_model == "bandlimited":
        process = replace(config.process, sigma=sigma)
        return sample_bandlimited(process, n, rng=rng1), sample_bandlimited(process, n, rng=rng2)
    dist = PhaseDistribution(sigma)
    return sample_iid(dist, n, rng=rng1), sample_iid(dist, n, rng=rng2)


def _shard_sizes(n_trials: int, shards: int) -> list[int]:
    base, extra = divmod(n_trials, shards)
    return [base + (1 if s < extra else 0) for s in range(shards)]


def simulate_stream(config: SimulationConfig, shard: int = 0, n: int | None = None):
    """Sample-by-sample homodyne record ``(q1, q2)`` for one shard.

    This is the raw time series behind :func:`run_protocol` and
    :func:`run_qcp` for the ``iid`` and ``bandlimited`` phase models, and
    what ``gen-series`` writes to disk.
    """
    if config.phase_model == "held":
        raise ValueError("the 'held' phase model has no single time series")
    if n is None:
        n = _shard_sizes(config.n_trials, config.shards)[shard]
    phi1, phi2 = _phase_stream(config, shard, n)
    theta = None
    if config.trigger_mode == "randomized_angle":
        theta = make_rng(config.seed, STREAM_TRIGGER_ANGLE, shard).uniform(0.0, 2 * math.pi, n)
    rng = make_rng(config.seed, STREAM_HOMODYNE, shard)
    return _sample_pair(config.params, phi1, phi2, rng, theta, config.psi)


def window_accept(q1: np.ndarray, q_threshold: float, n_qcp: int) -> np.ndarray:
    """Indices ``k`` with ``|q1| < Q`` at ``k`` and the ``n_qcp - 1`` samples before.

    Windows overlap: every index from ``n_qcp - 1`` on is a candidate.
    """
    if n_qcp < 1:
        raise ValueError(f"n_qcp must be >= 1, got {n_qcp}")
    if len(q1) < n_qcp:
        raise ValueError(f"series of length {len(q1)} is shorter than n_qcp={n_qcp}")
    ok = np.abs(np.asarray(q1)) < q_threshold
    if n_qcp == 1:
        return np.flatnonzero(ok)
    run = np.convolve(ok.astype(np.int64), np.ones(n_qcp, dtype=np.int64), mode="valid")
    return np.flatnonzero(run == n_qcp) + (n_qcp - 1)


def bootstrap_variance_se(x: np.ndarray, n_resamples: int, rng: np.random.Generator) -> float:
    """Nonparametric bootstrap standard error of the sample variance."""
    n = len(x)
    if n < 2 or n_resamples < 2:
        return math.nan
    reps = np.empty(n_resamples)
    for i in range(n_resamples):
        reps[i] = np.var(x[rng.integers(0, n, size=n)], ddof=1)
    return float(np.std(reps, ddof=1))


def estimate_from_samples(
    accepted_q2: np.ndarray,
    n_candidates: int,
    seed: int | None = 0,
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
) -> DistillationEstimate:
    """Summarise accepted output samples.

    The bootstrap stream depends only on ``seed``, so the Monte Carlo engine
    and the file postprocessor produce identical numbers for identical data.
    """
    accepted_q2 = np.asarray(accepted_q2, dtype=float)
    n_acc = len(accepted_q2)
    p_hat = n_acc / n_candidates
    se_p = math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n_candidates)
    if n_acc == 0:
        log.warning("no trials accepted out of %d", n_candidates)
        return DistillationEstimate(math.nan, 0.0, 0, n_candidates, math.nan, se_p)
    v_hat = float(np.var(accepted_q2, ddof=1)) if n_acc >= 2 else math.nan
    se_v = bootstrap_variance_se(accepted_q2, n_bootstrap, make_rng(seed, STREAM_BOOTSTRAP))
    return DistillationEstimate(v_hat, p_hat, n_acc, n_candidates, se_v, se_p)


def _held_shard(config: SimulationConfig, shard: int, n: int, n_qcp: int):
    params = config.params
    phi1, phi2 = _phase_stream(config, shard, n)
    theta = None
    if config.trigger_mode == "randomized_angle":
        theta = make_rng(config.seed, STREAM_TRIGGER_ANGLE, shard).uniform(0.0, 2 * math.pi, n)
    rng = make_rng(config.seed, STREAM_HOMODYNE, shard)
    q1, q2 = _sample_pair(params, phi1, phi2, rng, theta, config.psi)
    ok = np.abs(q1) < params.q_threshold
    if n_qcp > 1:
        # earlier trigger samples share the phases but are otherwise independent
        th = params.theta if theta is None else theta
        a = protocol_moments(params.state, phi1, phi2, th, config.psi, eta=params.eta).a
        probes = np.sqrt(a) * rng.standard_normal((n_qcp - 1, n))
        ok &= np.all(np.abs(probes) < params.q_threshold, axis=0)
    return q2[ok], n


def _stream_shard(config: SimulationConfig, shard: int, n_qcp: int):
    q1, q2 = simulate_stream(config, shard)
    idx = window_accept(q1, config.params.q_threshold, n_qcp)
    return q2[idx], len(q1) - (n_qcp - 1)


def _run(config: SimulationConfig, n_qcp: int) -> DistillationEstimate:
    sizes = _shard_sizes(config.n_trials, config.shards)
    if config.phase_model != "held" and min(sizes) < n_qcp:
        raise ValueError(f"shard of {min(sizes)} samples is shorter than n_qcp={n_qcp}")

    def job(shard):
        if config.phase_model == "held":
            return _held_shard(config, shard, sizes[shard], n_qcp)
        return _stream_shard(config, shard, n_qcp)

    if config.workers > 1 and config.shards > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            parts = list(pool.map(job, range(config.shards)))
    else:
        parts = [job(s) for s in range(config.shards)]
    accepted = np.concatenate([p[0] for p in parts])
    candidates = sum(p[1] for p in parts)
    return estimate_from_samples(accepted, candidates, config.seed, config.n_bootstrap)


def run_protocol(config: SimulationConfig) -> DistillationEstimate:
    """Single-trigger protocol: accept sample ``k`` iff ``|q1_k| < Q``.

    ``params.n_qcp`` is ignored here; see :func:`run_qcp`.
    """
    return _run(config, 1)


def run_qcp(config: SimulationConfig) -> DistillationEstimate:
    """Channel probing with ``params.n_qcp`` consecutive triggers.

    For ``iid``/``bandlimited`` phases a sliding window runs over each
    shard's stream; for ``held`` phases each trial carries its own window.
    """
    return _run(config, config.params.n_qcp)


def uncertainty_product(config: SimulationConfig) -> tuple[float, float]:
    """Estimate ``sqrt(V_x,out * V_p,out)`` and its standard error.

    Runs the protocol twice, verifying ``psi = 0`` with ``seed`` and
    ``psi = pi/2`` with ``seed + 1`` so the two runs are independent. The
    error is propagated to first order.
    """
    ex = run_qcp(replace(config, psi=0.0))
    ep = run_qcp(replace(config, psi=math.pi / 2, seed=config.seed + 1))
    u = math.sqrt(ex.v_out_hat * ep.v_out_hat)
    se = 0.5 * u * math.hypot(ex.se_v / ex.v_out_hat, ep.se_v / ep.v_out_hat)
    return u, se

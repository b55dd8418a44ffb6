"""Closed-form predictions of the distillation protocol, evaluated by quadrature.

For fixed phase shifts the trigger quadrature ``q1`` and the verified
quadrature ``q2`` are jointly Gaussian with moments ``(A, B, C)``. Integrating
``q2^2`` over the acceptance window ``|q1| < Q`` gives, per phase pair,

    B erf(Q / sqrt(2A)) - sqrt(2/pi) C^2 Q A^(-3/2) exp(-Q^2 / 2A)

and the window probability ``erf(Q / sqrt(2A))``. Averaging both over the two
independent Gaussian phase shifts and dividing yields the output variance
and success probability. Channel probing with ``N`` consecutive triggers
under perfectly correlated phases multiplies both integrands by
``erf(Q / sqrt(2A))**(N - 1)``.

The phase average is a tensor product of one-dimensional rules that absorb
the Gaussian weight exactly (see :class:`QuadratureRule`). Every evaluation is repeated with twice the nodes and a
:class:`NumericalConvergenceError` is raised if the two disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import brentq
from scipy.special import erf

from .gaussian_core import SqueezedModeParams, protocol_moments

DEFAULT_NODES = 64
#: Absolute tolerance for node-doubling agreement.
CONVERGENCE_TOL = 1e-8
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class NumericalConvergenceError(ArithmeticError):
    """Quadrature failed its node-doubling check."""


@dataclass(frozen=True)
class ProtocolParams:
    """Full protocol configuration.

    Both copies share ``state``. ``theta`` is the trigger quadrature angle,
    ``q_threshold`` the half-width ``Q`` of the acceptance window (may be
    ``inf`` for "accept everything"), ``eta`` the common detection efficiency
    and ``n_qcp`` the number of consecutive trigger samples that must pass.
    """

    state: SqueezedModeParams = SqueezedModeParams(0.32, 8.5)
    sigma: float = 0.0
    theta: float = 0.0
    q_threshold: float = 1.0
    eta: float = 1.0
    n_qcp: int = 1

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.q_threshold > 0:
            raise ValueError(f"q_threshold must be > 0, got {self.q_threshold}")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if int(self.n_qcp) != self.n_qcp or self.n_qcp < 1:
            raise ValueError(f"n_qcp must be a positive integer, got {self.n_qcp}")


#: Switch to the periodic rule once exp(-2 (sigma n)^2) is below double precision.
_WRAPPED_MIN_SIGMA_N = 5.0


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for averaging over one Gaussian phase shift.

    Every integrand in this module depends on a phase only through
    ``cos(2 phi)`` and ``sin(2 phi)``, so it is pi-periodic. Two families are
    used, both absorbing the Gaussian weight exactly:

    ``"hermite"``
        Gauss-Hermite in ``phi = sqrt(2) sigma t``. Best for narrow phase
        distributions (and exact for ``sigma = 0``).
    ``"wrapped"``
        Trapezoid rule on ``[-pi/2, pi/2)`` weighted by the Gaussian wrapped
        onto one period. Spectrally accurate once ``sigma * n_nodes >= 5``,
        where Gauss-Hermite only converges sub-exponentially because the
        integrands are not entire.

    An expectation is ``sum(weights * f(phases))``.
    """

    n_nodes: int
    sigma: float
    kind: str = field(init=False)
    phases: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n, sigma = self.n_nodes, self.sigma
        if n < 1:
            raise ValueError("need at least one node")
        if sigma * n >= _WRAPPED_MIN_SIGMA_N:
            kind = "wrapped"
            phases = np.arange(n) * math.pi / n - math.pi / 2
            # wrapped density as a sum over periodic images; non-negative by construction
            reach = int(math.ceil(9.0 * sigma / math.pi)) + 1
            shifted = phases[:, None] + math.pi * np.arange(-reach, reach + 1)[None, :]
            density = np.exp(-(shifted**2) / (2 * sigma**2)).sum(axis=1)
            density /= math.sqrt(2 * math.pi * sigma**2)
            weights = density * math.pi / n
            # E[cos 2 phi] = exp(-2 sigma^2) is exact for n >= 3
            checks = [(np.ones(n), 1.0)]
            if n >= 3:
                checks.append((np.cos(2 * phases), math.exp(-2 * sigma**2)))
        else:
            kind = "hermite"
            t, w = hermgauss(n)
            weights = w / math.sqrt(math.pi)
            phases = math.sqrt(2.0) * sigma * t
            # E[t^2k] = (2k-1)!! / 2^k under exp(-t^2)/sqrt(pi)
            checks = [
                (t ** (2 * j), math.prod(range(1, 2 * j, 2)) / 2**j) for j in range(min(n, 8))
            ]
        if np.any(weights < 0) or not np.any(weights > 0):
            raise NumericalConvergenceError(f"invalid {kind} quadrature weights")
        for values, exact in checks:
            if abs(np.dot(weights, values) - exact) > 1e-10 * max(1.0, exact):
                raise NumericalConvergenceError(f"{n}-node {kind} rule failed its moment check")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "weights", weights)


@lru_cache(maxsize=64)
def quadrature_rule(sigma: float, n_nodes: int = DEFAULT_NODES) -> QuadratureRule:
    return QuadratureRule(n_nodes, sigma)


@dataclass(frozen=True)
class AnalyticResult:
    v_out: float
    p_success: float
    v_in: float


def v_in_closed_form(params: ProtocolParams) -> float:
    """``(V_x + V_p)/2 + (V_x - V_p)/2 * exp(-2 sigma^2)``, after efficiency.

    Follows from ``E[cos(2 phi)] = exp(-2 sigma^2)`` for Gaussian ``phi``.
    """
    vx, vp = _detected_variances(params)
    return (vx + vp) / 2.0 + (vx - vp) / 2.0 * math.exp(-2.0 * params.sigma**2)


def v_in(params: ProtocolParams, n_nodes: int = DEFAULT_NODES) -> float:
    """Amplitude variance of one phase-diffused copy before distillation.

    Averages ``V_x cos^2(phi) + V_p sin^2(phi)`` over the phase distribution
    by Gauss-Hermite quadrature (checked by node doubling).
    """
    vx, vp = _detected_variances(params)

    def _eval(n):
        rule = quadrature_rule(params.sigma, n)
        phi = rule.phases
        return float(np.dot(rule.weights, vx * np.cos(phi) ** 2 + vp * np.sin(phi) ** 2))

    coarse, fine = _eval(n_nodes), _eval(2 * n_nodes)
    if abs(coarse - fine) > CONVERGENCE_TOL:
        raise NumericalConvergenceError(
            f"v_in quadrature not converged at sigma={params.sigma}: |{coarse} - {fine}|"
        )
    return coarse


def _detected_variances(params: ProtocolParams) -> tuple[float, float]:
    eta = params.eta
    return (
        eta * params.state.v_x + 1.0 - eta,
        eta * params.state.v_p + 1.0 - eta,
    )


def _phase_grid_integrals(
    params: ProtocolParams, psi: float, n_nodes: int, n_qcp: int, theta: float | None = None
) -> tuple[float, float]:
    """Return (numerator, success probability) on an ``n_nodes``^2 phase grid."""
    rule = quadrature_rule(params.sigma, n_nodes)
    phi = rule.phases
    phi1, phi2 = np.meshgrid(phi, phi, indexing="ij")
    weights = np.outer(rule.weights, rule.weights)
    th = params.theta if theta is None else theta
    m = protocol_moments(params.state, phi1, phi2, th, psi, eta=params.eta)
    a, b, c = m.a, m.b, m.c
    q = params.q_threshold
    if math.isinf(q):
        window = np.ones_like(a)
        tail = np.zeros_like(a)
    else:
        window = erf(q / np.sqrt(2.0 * a))
        tail = _SQRT_2_OVER_PI * c**2 * q * a**-1.5 * np.exp(-(q**2) / (2.0 * a))
    integrand = b * window - tail
    prob = window
    if n_qcp > 1:
        extra = window ** (n_qcp - 1)
        integrand = integrand * extra
        prob = prob * extra
    return float(np.sum(weights * integrand)), float(np.sum(weights * prob))


def _evaluate(
    params: ProtocolParams, psi: float, n_qcp: int, n_nodes: int, theta: float | None = None
) -> tuple[float, float]:
    num, prob = _phase_grid_integrals(params, psi, n_nodes, n_qcp, theta)
    num2, prob2 = _phase_grid_integrals(params, psi, 2 * n_nodes, n_qcp, theta)
    if prob <= 0 or prob2 <= 0:
        raise NumericalConvergenceError(
            f"success probability underflowed to {prob} (Q={params.q_threshold}, N={n_qcp})"
        )
    v, v2 = num / prob, num2 / prob2
    if abs(v - v2) > CONVERGENCE_TOL or abs(prob - prob2) > CONVERGENCE_TOL:
        raise NumericalConvergenceError(
            f"quadrature not converged with {n_nodes} nodes at sigma={params.sigma}, "
            f"Q={params.q_threshold}: dV={abs(v - v2):.3g}, dP={abs(prob - prob2):.3g}"
        )
    return v, min(prob, 1.0)


def v_out(params: ProtocolParams, n_nodes: int = DEFAULT_NODES) -> AnalyticResult:
    """Distilled amplitude variance and success probability for one trigger.

    Requires ``params.n_qcp == 1``; use :func:`v_out_qcp` otherwise.
    """
    if params.n_qcp != 1:
        raise ValueError("v_out handles n_qcp = 1 only; call v_out_qcp")
    return v_out_qcp(params, n_nodes)


def v_out_qcp(params: ProtocolParams, n_nodes: int = DEFAULT_NODES) -> AnalyticResult:
    """Output variance with ``params.n_qcp`` perfectly phase-correlated triggers."""
    v, p = _evaluate(params, 0.0, params.n_qcp, n_nodes)
    return AnalyticResult(v_out=v, p_success=p, v_in=v_in_closed_form(params))


def v_out_general(params: ProtocolParams, psi: float, n_nodes: int = DEFAULT_NODES) -> float:
    """Conditional variance of the output quadrature ``q2(psi)``.

    ``psi = 0`` reproduces :func:`v_out_qcp`; ``psi = pi/2`` gives the phase
    quadrature needed for the uncertainty product.
    """
    v, _ = _evaluate(params, psi, params.n_qcp, n_nodes)
    return v


def uncertainty_product(params: ProtocolParams, n_nodes: int = DEFAULT_NODES) -> float:
    """``sqrt(V_x,out * V_p,out)`` of the distilled state (1/purity if Gaussian)."""
    return math.sqrt(
        v_out_general(params, 0.0, n_nodes) * v_out_general(params, math.pi / 2, n_nodes)
    )


def v_out_randomized(
    params: ProtocolParams, n_theta: int = 64, n_nodes: int = DEFAULT_NODES
) -> AnalyticResult:
    """Output for a trigger whose homodyne angle is uniformly random.

    The accepted ensemble is a mixture over ``theta``, weighted by the
    per-angle success probability. ``theta`` is integrated with the periodic
    trapezoid rule on ``[0, pi)`` (the integrand has period ``pi``).
    """
    thetas = np.arange(n_theta) * math.pi / n_theta
    nums, probs = [], []
    for th in thetas:
        v, p = _evaluate(params, 0.0, params.n_qcp, n_nodes, theta=float(th))
        nums.append(v * p)
        probs.append(p)
    p_mean = float(np.mean(probs))
    return AnalyticResult(
        v_out=float(np.mean(nums)) / p_mean, p_success=p_mean, v_in=v_in_closed_form(params)
    )


def threshold_for_success(
    params: ProtocolParams, p_target: float, n_nodes: int = DEFAULT_NODES
) -> float:
    """Find the threshold ``Q`` whose analytic success probability is ``p_target``."""
    if not 0.0 < p_target < 1.0:
        raise ValueError(f"p_target must lie in (0, 1), got {p_target}")

    def gap(q):
        return _evaluate(_with_q(params, q), 0.0, params.n_qcp, n_nodes)[1] - p_target

    hi = 1.0
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e4:
            raise NumericalConvergenceError(f"no threshold reaches p={p_target}")
    lo = hi / 2.0
    while gap(lo) > 0:
        lo /= 2.0
        if lo < 1e-8:
            raise NumericalConvergenceError(f"no threshold reaches p={p_target}")
    return brentq(gap, lo, hi, xtol=1e-12)


def _with_q(params: ProtocolParams, q: float) -> ProtocolParams:
    return replace(params, q_threshold=q)


# -- phase-randomized threshold homodyning as a Fock-diagonal POVM -----------


def hermite_functions(n_max: int, x) -> np.ndarray:
    """Orthonormal Hermite functions ``psi_0 .. psi_n_max`` at ``x``.

    ``psi_n(x) = H_n(x) exp(-x^2/2) / sqrt(sqrt(pi) 2^n n!)``, built with the
    normalised three-term recurrence so no factorial is ever formed.
    Returns an array of shape ``(n_max + 1,) + shape(x)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = math.pi**-0.25 * np.exp(-(x**2) / 2.0)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * x * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def povm_coefficients(q_threshold: float, n_max: int = 20) -> np.ndarray:
    """Fock-diagonal coefficients ``P_0 .. P_n_max`` of the threshold POVM.

    ``P_n`` is the integral of ``psi_n(x)^2`` over ``[-Q, Q]``. Here ``x``
    is the quadrature scaled so that the vacuum variance is 1/2, i.e. ``Q``
    is in units ``1/sqrt(2)`` of the shot-noise-normalised quadrature used
    elsewhere in the package.

    Uses the exact recursion ``P_n = P_{n-1} - sqrt(2/n) psi_n(Q) psi_{n-1}(Q)``
    started from ``P_0 = erf(Q)``; it follows from
    ``d/dx [psi_n psi_{n-1}] = sqrt(2n) (psi_{n-1}^2 - psi_n^2)``.
    """
    if not q_threshold >= 0:
        raise ValueError(f"q_threshold must be >= 0, got {q_threshold}")
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    if math.isinf(q_threshold):
        return np.ones(n_max + 1)
    psi = hermite_functions(n_max, q_threshold)
    p = np.empty(n_max + 1)
    p[0] = math.erf(q_threshold)
    for n in range(1, n_max + 1):
        p[n] = p[n - 1] - math.sqrt(2.0 / n) * psi[n] * psi[n - 1]
    return p

"""Covariance algebra for two phase-rotated single-mode Gaussian states.

Covariances are plain numpy arrays in shot-noise units (vacuum = identity):

* a single-mode covariance has shape ``(..., 2, 2)`` over ``(x, p)``,
* a two-mode covariance has shape ``(..., 4, 4)`` over ``(x1, p1, x2, p2)``.

Leading axes broadcast, so a whole grid of phase shifts can be pushed through
:func:`rotate_covariance`, :func:`beamsplitter_transform` and
:func:`conditional_moments` in one call.

Conventions
-----------
Phase rotation by ``phi`` maps ``x -> x cos(phi) + p sin(phi)`` and
``p -> -x sin(phi) + p cos(phi)``; the balanced beam splitter maps
``a1 -> (a1 + a2)/sqrt(2)``, ``a2 -> (a1 - a2)/sqrt(2)`` for both quadratures.
With these choices the general path reproduces :func:`closed_form_moments`
including the sign of the ``sin(2 phi)`` cross terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Eigenvalue tolerance for positive-semidefiniteness checks.
PSD_TOL = -1e-9

_SQRT_HALF = np.sqrt(0.5)

#: Balanced beam-splitter symplectic matrix on (x1, p1, x2, p2). Self-inverse.
BS_MATRIX = _SQRT_HALF * np.array(
    [
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 1.0],
        [1.0, 0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0, -1.0],
    ]
)

_OMEGA_1 = np.array([[0.0, 1.0], [-1.0, 0.0]])
_OMEGA_2 = np.block([[_OMEGA_1, np.zeros((2, 2))], [np.zeros((2, 2)), _OMEGA_1]])


@dataclass(frozen=True)
class SqueezedModeParams:
    """Diagonal covariance ``diag(v_x, v_p)`` of one squeezed input mode.

    The x quadrature is the squeezed one by convention, but nothing here
    requires ``v_x < 1``.
    """

    v_x: float
    v_p: float

    def __post_init__(self):
        if not (self.v_x > 0 and self.v_p > 0):
            raise ValueError(f"variances must be positive, got v_x={self.v_x}, v_p={self.v_p}")
        if self.v_x * self.v_p < 1.0 - 1e-12:
            raise ValueError(
                f"v_x * v_p = {self.v_x * self.v_p:.6g} violates the uncertainty relation (>= 1)"
            )

    def covariance(self) -> np.ndarray:
        return np.diag([float(self.v_x), float(self.v_p)])

    @property
    def purity(self) -> float:
        return 1.0 / np.sqrt(self.v_x * self.v_p)


@dataclass(frozen=True)
class ConditionalMoments:
    """Second moments of the trigger quadrature ``q1(theta)`` and the verified
    quadrature ``q2(psi)``.

    ``a`` and ``b`` are the two variances, ``c`` their covariance. The
    determinant ``d = a*b - c**2`` is derived, never passed in. Fields may be
    arrays of a common shape.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "d", self.a * self.b - self.c**2)


def mode_covariance(v_x, v_p, c_xp=0.0) -> np.ndarray:
    """Stack of 2x2 covariances from (broadcastable) entries."""
    v_x, v_p, c_xp = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (v_x, v_p, c_xp)))
    out = np.empty(v_x.shape + (2, 2))
    out[..., 0, 0] = v_x
    out[..., 1, 1] = v_p
    out[..., 0, 1] = out[..., 1, 0] = c_xp
    return out


def is_physical(cov: np.ndarray, tol: float = PSD_TOL) -> bool:
    """Check the uncertainty relation ``cov + i*Omega >= 0`` (up to ``tol``).

    Works for single-mode ``(2, 2)`` and two-mode ``(4, 4)`` covariances and
    stacks thereof. Also requires symmetry.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[-1]
    if cov.shape[-2:] not in ((2, 2), (4, 4)):
        raise ValueError(f"expected a 2x2 or 4x4 covariance, got shape {cov.shape}")
    if not np.allclose(cov, np.swapaxes(cov, -1, -2), atol=1e-12):
        return False
    omega = _OMEGA_1 if n == 2 else _OMEGA_2
    eig = np.linalg.eigvalsh(cov + 1j * omega)
    return bool(np.all(eig >= tol))


def _rotation(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    c, s = np.cos(phi), np.sin(phi)
    rot = np.empty(phi.shape + (2, 2))
    rot[..., 0, 0] = c
    rot[..., 0, 1] = s
    rot[..., 1, 0] = -s
    rot[..., 1, 1] = c
    return rot


def rotate_covariance(cov: np.ndarray, phi) -> np.ndarray:
    """Return ``R(phi) @ cov @ R(phi).T`` (broadcasting over ``phi``).

    For ``cov = diag(V_x, V_p)`` the diagonal becomes
    ``V_x cos^2 + V_p sin^2`` and ``V_p cos^2 + V_x sin^2`` and the
    off-diagonal ``(V_p - V_x) sin(2 phi) / 2``.
    """
    rot = _rotation(phi)
    return rot @ np.asarray(cov, dtype=float) @ np.swapaxes(rot, -1, -2)


def block_diag_two_mode(cov1: np.ndarray, cov2: np.ndarray) -> np.ndarray:
    cov1 = np.asarray(cov1, dtype=float)
    cov2 = np.asarray(cov2, dtype=float)
    shape = np.broadcast_shapes(cov1.shape[:-2], cov2.shape[:-2])
    out = np.zeros(shape + (4, 4))
    out[..., :2, :2] = cov1
    out[..., 2:, 2:] = cov2
    return out


def beamsplitter_transform(cov1: np.ndarray, cov2: np.ndarray) -> np.ndarray:
    """Interfere two uncorrelated modes on a balanced beam splitter.

    Returns the ``(..., 4, 4)`` output covariance over ``(x1, p1, x2, p2)``.
    """
    return BS_MATRIX @ block_diag_two_mode(cov1, cov2) @ BS_MATRIX.T


def beamsplitter_inverse(tm: np.ndarray) -> np.ndarray:
    """Undo :func:`beamsplitter_transform` (the balanced map is self-inverse)."""
    return BS_MATRIX.T @ np.asarray(tm, dtype=float) @ BS_MATRIX


def conditional_moments(tm: np.ndarray, theta, psi=0.0) -> ConditionalMoments:
    """Read ``Var[q1(theta)]``, ``Var[q2(psi)]`` and their covariance off a
    two-mode covariance via quadratic forms.

    ``q_j(angle) = x_j cos(angle) + p_j sin(angle)``.
    """
    tm = np.asarray(tm, dtype=float)
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    v = np.stack([np.cos(psi), np.sin(psi)], axis=-1)
    t11 = tm[..., :2, :2]
    t22 = tm[..., 2:, 2:]
    t12 = tm[..., :2, 2:]
    a = np.einsum("...i,...ij,...j->...", u, t11, u)
    b = np.einsum("...i,...ij,...j->...", v, t22, v)
    c = np.einsum("...i,...ij,...j->...", u, t12, v)
    return ConditionalMoments(a, b, c)


def apply_detection_efficiency(cov: np.ndarray, eta: float) -> np.ndarray:
    """Mix in vacuum for a detector of efficiency ``eta``: ``V -> eta V + 1 - eta``.

    Off-diagonal entries scale by ``eta``. Works for any stack of 2x2 or 4x4
    covariances since the vacuum is the identity in shot-noise units.
    """
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"detection efficiency must lie in (0, 1], got {eta}")
    cov = np.asarray(cov, dtype=float)
    return eta * cov + (1.0 - eta) * np.eye(cov.shape[-1])


def protocol_moments(
    params: SqueezedModeParams, phi1, phi2, theta, psi=0.0, eta: float = 1.0
) -> ConditionalMoments:
    """Moments after rotation by ``phi1``/``phi2``, loss ``eta`` and the beam splitter.

    This is the general path used by the analytic and Monte Carlo engines.
    It broadcasts over every angle argument, and over ``params.v_x`` and
    ``params.v_p`` if those are arrays.
    """
    cov = apply_detection_efficiency(mode_covariance(params.v_x, params.v_p), eta)
    tm = beamsplitter_transform(rotate_covariance(cov, phi1), rotate_covariance(cov, phi2))
    return conditional_moments(tm, theta, psi)


def closed_form_moments(params: SqueezedModeParams, phi1, phi2, theta) -> ConditionalMoments:
    """Explicit A, B, C for the amplitude quadrature of output mode 2.

    Written out term by term (including the ``sin(2 phi1) + sin(2 phi2)``
    cross term in A) so it can serve as an oracle for
    :func:`protocol_moments` at ``psi = 0``.
    """
    vx, vp = params.v_x, params.v_p
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    theta = np.asarray(theta, dtype=float)
    c1, s1 = np.cos(phi1) ** 2, np.sin(phi1) ** 2
    c2, s2 = np.cos(phi2) ** 2, np.sin(phi2) ** 2
    vx1 = vx * c1 + vp * s1
    vx2 = vx * c2 + vp * s2
    vp1 = vp * c1 + vx * s1
    vp2 = vp * c2 + vx * s2
    cross = (vp - vx) / 4.0
    a = (
        (vx1 + vx2) / 2.0 * np.cos(theta) ** 2
        + (vp1 + vp2) / 2.0 * np.sin(theta) ** 2
        + cross * (np.sin(2 * phi1) + np.sin(2 * phi2)) * np.sin(2 * theta)
    )
    b = (vx1 + vx2) / 2.0
    c = (vx1 - vx2) / 2.0 * np.cos(theta) + cross * (np.sin(2 * phi1) - np.sin(2 * phi2)) * np.sin(
        theta
    )
    return ConditionalMoments(a, b + 0.0 * a, c)

"""Gain parameterization, Hurwitz/Lyapunov certification and the certified gain table.

A gain vector ``k`` has 14 entries::

    k[0:3]   position gains (x, y, z)
    k[3:6]   velocity gains
    k[6:9]   acceleration gains
    k[9:12]  jerk gains
    k[12]    yaw-angle gain
    k[13]    yaw-rate gain

``K = build_K(k)`` closes the loop ``s = -K z`` around the integrator chains of
:mod:`safegain.flatness`, giving ``A_cl = A_EXT - B_EXT K``. Each axis then has
characteristic polynomial ``l^4 + k_j l^3 + k_a l^2 + k_v l + k_p`` and yaw has
``l^2 + k_psidot l + k_psi``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyTable, InternalDisagreement, NotHurwitz
from .flatness import A_EXT, B_EXT, Z_DIM

logger = logging.getLogger(__name__)

N_GAINS = 14
DEFAULT_EPSILON = 0.5
DEFAULT_RHO_MARGIN = 1.05
RHO_FLOOR = 1e-6
HURWITZ_MARGIN = 1e-9
LYAPUNOV_TOL = 1e-8

TABLE_VERSION = "safegain.gain_table/1"

AxisLevel = tuple[float, float, float, float]   # (k_p, k_v, k_a, k_j)
YawLevel = tuple[float, float]                  # (k_psi, k_psidot)


def gain_vector(k, k_min=None, k_max=None) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape != (N_GAINS,):
        raise ValueError(f"gain vector must have {N_GAINS} entries, got shape {k.shape}")
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise ValueError("gain entries must be finite and positive")
    if k_min is not None and np.any(k < np.asarray(k_min)):
        raise ValueError("gain below configured lower bound")
    if k_max is not None and np.any(k > np.asarray(k_max)):
        raise ValueError("gain above configured upper bound")
    return k


def compose_gain(axis_x: Sequence[float], axis_y: Sequence[float], axis_z: Sequence[float],
                 yaw: Sequence[float]) -> np.ndarray:
    """Interleave per-axis ``(k_p, k_v, k_a, k_j)`` levels into the 14-gain layout."""
    k = np.empty(N_GAINS)
    for a, lvl in enumerate((axis_x, axis_y, axis_z)):
        k[a], k[3 + a], k[6 + a], k[9 + a] = lvl
    k[12], k[13] = yaw
    return k


def axis_levels_from_poles(poles: Sequence[float]) -> list[AxisLevel]:
    """``(s + lam)^4`` coefficients for each ``lam``."""
    return [(lam**4, 4 * lam**3, 6 * lam**2, 4 * lam) for lam in poles]


def yaw_levels_from_poles(poles: Sequence[float]) -> list[YawLevel]:
    return [(mu**2, 2 * mu) for mu in poles]


DEFAULT_AXIS_POLES = (1.5, 2.5, 4.0)
DEFAULT_YAW_POLES = (2.0, 4.0)


def build_K(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    K = np.zeros((4, Z_DIM))
    for a in range(3):
        K[a, a] = k[a]
        K[a, 3 + a] = k[3 + a]
        K[a, 6 + a] = k[6 + a]
        K[a, 9 + a] = k[9 + a]
    K[3, 12] = k[12]
    K[3, 13] = k[13]
    return K


def closed_loop(k) -> np.ndarray:
    return A_EXT - B_EXT @ build_K(k)


def routh_axis(kp: float, kv: float, ka: float, kj: float) -> str | None:
    """Routh-Hurwitz test for ``l^4 + kj l^3 + ka l^2 + kv l + kp``.

    Returns None when stable, otherwise the first failing condition.
    """
    if min(kp, kv, ka, kj) <= 0:
        return "nonpositive coefficient"
    if not kj * ka > kv:
        return "k_j*k_a <= k_v"
    if not kv * (kj * ka - kv) > kj * kj * kp:
        return "k_v*(k_j*k_a - k_v) <= k_j^2*k_p"
    return None


def routh_yaw(kpsi: float, kpsidot: float) -> str | None:
    if min(kpsi, kpsidot) <= 0:
        return "nonpositive yaw coefficient"
    return None


def routh_reason(k) -> str | None:
    k = np.asarray(k, dtype=float)
    for a, name in enumerate("xyz"):
        why = routh_axis(k[a], k[3 + a], k[6 + a], k[9 + a])
        if why:
            return f"axis {name}: {why}"
    why = routh_yaw(k[12], k[13])
    return f"yaw: {why}" if why else None


def is_hurwitz(k, margin: float = HURWITZ_MARGIN) -> bool:
    """Hurwitz test computed by Routh conditions and by eigenvalues; both must agree."""
    by_routh = routh_reason(k) is None
    eig = np.linalg.eigvals(closed_loop(k))
    by_eig = bool(np.all(eig.real < -margin))
    if by_routh != by_eig:
        raise InternalDisagreement(
            f"Routh ({by_routh}) and eigenvalue ({by_eig}) Hurwitz tests disagree; "
            f"max Re(eig) = {eig.real.max():.3e}"
        )
    return by_routh


def solve_lyapunov(A: np.ndarray, Q: np.ndarray | None = None) -> np.ndarray:
    """Solve ``A^T P + P A = -Q`` (default ``Q = I``) through the Kronecker form.

    ``vec(A^T P + P A) = (I kron A^T + A^T kron I) vec(P)`` with column-major vec.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    eye = np.eye(n)
    L = np.kron(eye, A.T) + np.kron(A.T, eye)
    try:
        vecP = np.linalg.solve(L, -Q.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise NotHurwitz("Lyapunov operator is singular") from exc
    P = vecP.reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)) or np.linalg.eigvalsh(P)[0] <= 0:
        raise NotHurwitz("Lyapunov solution is not positive definite")
    return P


def lyapunov_residual(A: np.ndarray, P: np.ndarray) -> float:
    return float(np.linalg.norm(A.T @ P + P @ A + np.eye(A.shape[0]), "fro"))


def iss_constants(P: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> tuple[float, float]:
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    pb = np.linalg.norm(P @ B_EXT, 2)
    return 1.0 - epsilon, float(pb * pb / epsilon)


@dataclass(frozen=True)
class Certificate:
    P: np.ndarray
    alpha: float
    beta: float
    rho: float
    snap_bound_used: float
    residual: float

    @property
    def ultimate_bound(self) -> float:
        """``beta * rbar4^2 / alpha``: the squared-norm ball the error enters."""
        return self.beta * self.snap_bound_used**2 / self.alpha

    @property
    def eig_min(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])

    @property
    def eig_max(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[-1])

    def value(self, z: np.ndarray) -> np.ndarray | float:
        """``V(z) = z^T P z``; ``z`` may be a single vector or rows of vectors."""
        z = np.asarray(z)
        if z.ndim == 1:
            return float(z @ self.P @ z)
        return np.einsum("ij,jk,ik->i", z, self.P, z)


def certify_gain(k, snap_bound: float, epsilon: float = DEFAULT_EPSILON,
                 rho_margin: float = DEFAULT_RHO_MARGIN) -> Certificate:
    """Certificate ``(P, alpha, beta, rho)`` for gain ``k``.

    ``rho`` is scaled by ``max(1, lambda_max(P))`` on top of ``beta rbar4^2 / alpha``:
    on the boundary of ``{V <= rho}`` this guarantees ``||z||^2 > beta rbar4^2 / alpha``
    and hence ``V_dot < 0`` there.
    """
    k = np.asarray(k, dtype=float)
    if not is_hurwitz(k):
        raise NotHurwitz(f"closed loop not Hurwitz ({routh_reason(k)})")
    A_cl = closed_loop(k)
    P = solve_lyapunov(A_cl)
    residual = lyapunov_residual(A_cl, P)
    alpha, beta = iss_constants(P, epsilon)
    lam_max = float(np.linalg.eigvalsh(P)[-1])
    rho = rho_margin * max(1.0, lam_max) * beta * snap_bound**2 / alpha
    return Certificate(P, alpha, beta, max(rho, RHO_FLOOR), float(snap_bound), residual)


def dissipation_gap(cert: Certificate, A_cl: np.ndarray, z: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``V_dot - (-alpha ||z||^2 + beta rbar4^2)`` for rows of ``z`` and disturbances ``d``.

    The linear error dynamics are ``z_dot = A_cl z - B_EXT d``; nonpositive values
    mean the ISS dissipation inequality holds at that sample.
    """
    P = cert.P
    S = A_cl.T @ P + P @ A_cl
    vdot = np.einsum("ij,jk,ik->i", z, S, z) - 2.0 * np.einsum("ij,jk,ik->i", z, P @ B_EXT, d)
    bound = -cert.alpha * np.einsum("ij,ij->i", z, z) + cert.beta * cert.snap_bound_used**2
    return vdot - bound


def reference_disturbance(snap: np.ndarray) -> np.ndarray:
    """Exogenous input of the error chain: translational snap, zero yaw acceleration."""
    return np.append(snap, 0.0)


def simulate_error_dynamics(A_cl: np.ndarray, z0: np.ndarray, disturbance, t_end: float,
                            dt: float = 5e-3, t0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """RK4 integration of ``z_dot = A_cl z - B_EXT d(t)`` for one or many initial states.

    ``disturbance(t)`` returns the 4-vector ``d``; ``z0`` may be ``(14,)`` or ``(n, 14)``.
    Returns the time grid and the states with shape ``(steps + 1, *z0.shape)``.
    """
    z = np.array(z0, dtype=float)
    steps = int(round((t_end - t0) / dt))
    out = np.empty((steps + 1, *z.shape))
    out[0] = z
    Bt = B_EXT.T

    def f(t, z):
        return z @ A_cl.T - disturbance(t) @ Bt

    t = t0
    for i in range(steps):
        k1 = f(t, z)
        k2 = f(t + 0.5 * dt, z + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, z + 0.5 * dt * k2)
        k4 = f(t + dt, z + dt * k3)
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (i + 1) * dt
        out[i + 1] = z
    return t0 + dt * np.arange(steps + 1), out


def boundary_points(cert: Certificate, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` random points with ``V(z) = rho`` exactly (up to rounding)."""
    w = rng.normal(size=(n, Z_DIM))
    return w * np.sqrt(cert.rho / cert.value(w))[:, None]


@dataclass(frozen=True)
class GainEntry:
    k: np.ndarray
    certificate: Certificate
    levels: tuple[int, int, int, int]   # indices into (axis, axis, axis, yaw) level lists


@dataclass
class GainTable:
    entries: list[GainEntry]
    axis_levels: list[AxisLevel]
    yaw_levels: list[YawLevel]
    snap_bound: float
    rejected: list[tuple[tuple[int, int, int, int], str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise EmptyTable("no candidate gain vector could be certified")
        self._K = [build_K(e.k) for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> GainEntry:
        return self.entries[index]

    def K(self, action: int) -> np.ndarray:
        return self._K[action]

    def gains(self) -> np.ndarray:
        return np.array([e.k for e in self.entries])

    def to_dict(self) -> dict:
        return table_to_dict(self)

    def hash(self) -> str:
        return hashlib.sha256(dumps_table(self).encode("utf-8")).hexdigest()


def build_gain_table(axis_levels: Sequence[Sequence[float]], yaw_levels: Sequence[Sequence[float]],
                     snap_bound: float, epsilon: float = DEFAULT_EPSILON,
                     rho_margin: float = DEFAULT_RHO_MARGIN) -> GainTable:
    """Certify every (x-level, y-level, z-level, yaw-level) combination.

    Candidates failing certification are logged and recorded in ``rejected``.
    """
    axis_levels = [tuple(float(v) for v in lvl) for lvl in axis_levels]
    yaw_levels = [tuple(float(v) for v in lvl) for lvl in yaw_levels]
    if not axis_levels or not yaw_levels:
        raise ValueError("level lists must be nonempty")
    entries, rejected = [], []
    na, ny = len(axis_levels), len(yaw_levels)
    for idx in itertools.product(range(na), range(na), range(na), range(ny)):
        ix, iy, iz, iw = idx
        k = compose_gain(axis_levels[ix], axis_levels[iy], axis_levels[iz], yaw_levels[iw])
        reason = routh_reason(k)
        if reason is None:
            try:
                cert = certify_gain(k, snap_bound, epsilon, rho_margin)
            except NotHurwitz as exc:
                reason = str(exc)
        if reason is not None:
            logger.info("rejecting candidate %s: %s", idx, reason)
            rejected.append((idx, reason))
            continue
        entries.append(GainEntry(k, cert, idx))
    return GainTable(entries, axis_levels, yaw_levels, float(snap_bound), rejected)


def inscribed_radius(table: GainTable) -> float:
    """Radius of the largest ``||z||`` ball inside every ``Omega_rho`` of the table."""
    return min(math.sqrt(e.certificate.rho / e.certificate.eig_max) for e in table.entries)


def reachable_radius(table: GainTable, z0_radius: float) -> float:
    """Bound on ``||z(t)||`` for any single certified gain started in ``||z0|| <= z0_radius``.

    A trajectory starting inside the ball stays inside ``{V <= max(lam_max r0^2, rho)}``,
    whose norm extent is ``sqrt(level / lam_min)``. The max over the table is returned.
    """
    out = 0.0
    for e in table.entries:
        c = e.certificate
        level = max(c.eig_max * z0_radius**2, c.rho)
        out = max(out, math.sqrt(level / c.eig_min))
    return out


# ---------------------------------------------------------------- serialization

def _lower(P: np.ndarray) -> list[float]:
    return [float(v) for v in P[np.tril_indices(P.shape[0])]]


def _from_lower(vals: Sequence[float], n: int = Z_DIM) -> np.ndarray:
    P = np.zeros((n, n))
    P[np.tril_indices(n)] = vals
    upper = np.triu_indices(n, 1)
    P[upper] = P.T[upper]   # copy, not add: keeps signed zeros bit-exact
    return P


def table_to_dict(table: GainTable) -> dict:
    return {
        "version": TABLE_VERSION,
        "snap_bound": table.snap_bound,
        "axis_levels": [list(lvl) for lvl in table.axis_levels],
        "yaw_levels": [list(lvl) for lvl in table.yaw_levels],
        "actions": [
            {
                "index": i,
                "levels": list(e.levels),
                "k": [float(v) for v in e.k],
                "alpha": e.certificate.alpha,
                "beta": e.certificate.beta,
                "rho": e.certificate.rho,
                "residual": e.certificate.residual,
                "P_lower": _lower(e.certificate.P),
            }
            for i, e in enumerate(table.entries)
        ],
        "rejected": [{"levels": list(idx), "reason": why} for idx, why in table.rejected],
    }


def table_from_dict(data: dict) -> GainTable:
    if data.get("version") != TABLE_VERSION:
        raise ValueError(f"unsupported gain table version {data.get('version')!r}")
    snap = float(data["snap_bound"])
    entries = []
    for a in data["actions"]:
        cert = Certificate(_from_lower(a["P_lower"]), a["alpha"], a["beta"], a["rho"], snap, a["residual"])
        entries.append(GainEntry(np.array(a["k"], dtype=float), cert, tuple(a["levels"])))
    return GainTable(
        entries,
        [tuple(lvl) for lvl in data["axis_levels"]],
        [tuple(lvl) for lvl in data["yaw_levels"]],
        snap,
        [(tuple(r["levels"]), r["reason"]) for r in data.get("rejected", [])],
    )


def dumps_table(table: GainTable) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(table_to_dict(table), indent=1) + "\n"


def write_table(table: GainTable, path: str | Path) -> None:
    Path(path).write_text(dumps_table(table), encoding="utf-8")


def read_table(path: str | Path) -> GainTable:
    path = Path(path)
    try:
        return table_from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ValueError(f"cannot read gain table {path}: {exc}") from exc

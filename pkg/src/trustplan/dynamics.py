"""Deterministic discrete-time benchmark dynamics used as ground truth.

Two systems are provided: a 2D sinusoidal drift system and a 6D fully-actuated
quadrotor under Euler-angle kinematics. Both are pure functions of (x, u) and
accept either a single state/control or a batch (leading axis).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SINUSOID_DT = 0.2
QUADROTOR_DT = 0.1

# Euler-rate terms blow up as cos(theta) -> 0; reject before dividing.
_COS_THETA_MIN = 1e-9


class DynamicsError(ValueError):
    """Raised on dimension mismatches or near-singular Euler angles."""


@dataclass(frozen=True)
class SystemSpec:
    """Static description of a benchmark system.

    state_box / control_box are (dim, 2) arrays of [low, high] per dimension.
    position_dims lists the coordinates used for workspace collision checks.
    """

    name: str
    dim_x: int
    dim_u: int
    state_box: np.ndarray
    control_box: np.ndarray
    dt: float
    position_dims: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.dim_u < self.dim_x:
            raise DynamicsError(
                f"{self.name}: dim_u={self.dim_u} < dim_x={self.dim_x}; "
                "the one-step feedback law needs at least as many controls as states"
            )
        for box, dim, tag in ((self.state_box, self.dim_x, "state_box"),
                              (self.control_box, self.dim_u, "control_box")):
            if box.shape != (dim, 2):
                raise DynamicsError(f"{self.name}: {tag} shape {box.shape} != ({dim}, 2)")
            if np.any(box[:, 1] < box[:, 0]):
                raise DynamicsError(f"{self.name}: empty {tag}")


def _as_batch(v, dim, tag):
    arr = np.asarray(v, dtype=float)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DynamicsError(f"{tag} has shape {np.shape(v)}, expected ({dim},) or (n, {dim})")
    if not np.all(np.isfinite(arr)):
        raise DynamicsError(f"{tag} contains non-finite entries")
    return arr, squeeze


def step_sinusoid(x, u):
    """One step of the 2D sinusoidal system, f0(x) + f1(x) u with dt = 0.2."""
    xb, squeeze = _as_batch(x, 2, "x")
    ub, _ = _as_batch(u, 2, "u")
    if len(ub) != len(xb):
        raise DynamicsError("x and u batch sizes differ")
    px, py = xb[:, 0], xb[:, 1]
    ax = 0.3 * (px + 4.5)
    ay = 0.3 * (py + 4.5)
    drift = np.stack([
        3.0 * np.sin(ax) * np.abs(np.sin(ay)),
        3.0 * np.sin(ay) * np.abs(np.sin(ax)),
    ], axis=1)
    gain = np.stack([1.0 + 0.05 * np.cos(py), 1.0 + 0.05 * np.sin(px)], axis=1)
    out = xb + SINUSOID_DT * (drift + gain * ub)
    return out[0] if squeeze else out


def quadrotor_control_matrix(x):
    """f1(x) for the quadrotor: dt * [body-to-world rotation | Euler-rate map]."""
    xb, squeeze = _as_batch(x, 6, "x")
    phi, theta, psi = xb[:, 3], xb[:, 4], xb[:, 5]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    if np.any(np.abs(cth) < _COS_THETA_MIN):
        raise DynamicsError("quadrotor Euler angles near singular (|cos theta| < 1e-9)")
    tth = sth / cth

    n = len(xb)
    f1 = np.zeros((n, 6, 6))
    f1[:, 0, 0] = cth * cpsi
    f1[:, 0, 1] = -cphi * spsi + cpsi * sphi * sth
    f1[:, 0, 2] = spsi * sphi + cphi * cpsi * sth
    f1[:, 1, 0] = cth * spsi
    f1[:, 1, 1] = cphi * cpsi + sphi * spsi * sth
    f1[:, 1, 2] = -cpsi * sphi + cphi * spsi * sth
    f1[:, 2, 0] = -sth
    f1[:, 2, 1] = cth * sphi
    f1[:, 2, 2] = cphi * cth
    f1[:, 3, 3] = 1.0
    f1[:, 3, 4] = sphi * tth
    f1[:, 3, 5] = cphi * tth
    f1[:, 4, 4] = cphi
    f1[:, 4, 5] = -sphi
    f1[:, 5, 4] = sphi / cth
    f1[:, 5, 5] = cphi / cth
    f1 *= QUADROTOR_DT
    return f1[0] if squeeze else f1


def step_quadrotor(x, u):
    """One step of the 6D quadrotor, x + f1(x) u with dt = 0.1 (f0(x) = x)."""
    xb, squeeze = _as_batch(x, 6, "x")
    ub, _ = _as_batch(u, 6, "u")
    if len(ub) != len(xb):
        raise DynamicsError("x and u batch sizes differ")
    f1 = quadrotor_control_matrix(xb)
    out = xb + np.einsum("nij,nj->ni", f1, ub)
    return out[0] if squeeze else out


def _box(rows):
    return np.array(rows, dtype=float)


SINUSOID_SPEC = SystemSpec(
    name="sinusoid2d",
    dim_x=2,
    dim_u=2,
    state_box=_box([[-5.0, 5.0], [-5.0, 5.0]]),
    control_box=_box([[-1.0, 1.0], [-1.0, 1.0]]),
    dt=SINUSOID_DT,
    position_dims=(0, 1),
)

_HOVER = np.pi / 20.0

QUADROTOR_SPEC = SystemSpec(
    name="quadrotor6d",
    dim_x=6,
    dim_u=6,
    state_box=_box([[-1.0, 1.0]] * 3 + [[-_HOVER, _HOVER]] * 3),
    control_box=_box([[-1.0, 1.0]] * 6),
    dt=QUADROTOR_DT,
    position_dims=(0, 1, 2),
)

_SYSTEMS = {
    "sinusoid2d": (SINUSOID_SPEC, step_sinusoid),
    "quadrotor6d": (QUADROTOR_SPEC, step_quadrotor),
}


def get_system(name: str):
    """Return (SystemSpec, step function) for a registered system name."""
    try:
        return _SYSTEMS[name]
    except KeyError:
        raise DynamicsError(f"unknown system {name!r}; known: {sorted(_SYSTEMS)}") from None

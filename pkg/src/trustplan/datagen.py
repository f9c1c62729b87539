"""Training and estimation dataset generation for the benchmark systems.

The 2D system draws states uniformly from an L-shaped union of boxes and
controls uniformly from the control box. The quadrotor uses a Halton sequence
over the joint state-control box (deterministic low-discrepancy coverage),
with an optional extra Halton coordinate that rescales each control toward
zero so the hold region ||u|| ~ 0 has data at desk-scale sample counts.
"""

from __future__ import annotations

import numpy as np

from .model import Dataset
from .dynamics import get_system

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53)

# Default L-shape for the 2D system: two overlapping boxes forming an L.
DEFAULT_LSHAPE = (
    ((-5.0, 5.0), (-5.0, 0.0)),
    ((-5.0, 0.0), (-5.0, 5.0)),
)


def radical_inverse(base: int, index: int) -> float:
    """Van der Corput radical inverse of index in the given base."""
    inv = 0.0
    denom = 1.0
    i = index
    while i > 0:
        denom *= base
        i, digit = divmod(i, base)
        inv += digit / denom
    return inv


def halton_points(n: int, dims: int, start_index: int = 1) -> np.ndarray:
    """First n Halton points in [0, 1)^dims using the first dims primes.

    Indexing starts at 1 (index 0 is the all-zero corner).
    """
    if dims > len(_PRIMES):
        raise ValueError(f"at most {len(_PRIMES)} Halton dimensions supported")
    out = np.empty((n, dims))
    for j in range(dims):
        base = _PRIMES[j]
        out[:, j] = [radical_inverse(base, i) for i in range(start_index, start_index + n)]
    return out


def _scale_to_box(unit, box):
    lo, hi = box[:, 0], box[:, 1]
    return lo + unit * (hi - lo)


def sample_lshape(n: int, boxes, rng) -> np.ndarray:
    """Uniform samples over a union of 2D boxes by bounding-box rejection."""
    arr = np.array([[b[0][0], b[0][1], b[1][0], b[1][1]] for b in boxes])
    lo = np.array([arr[:, 0].min(), arr[:, 2].min()])
    hi = np.array([arr[:, 1].max(), arr[:, 3].max()])
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        cand = rng.uniform(lo, hi, size=(2 * (n - filled), 2))
        inside = np.zeros(len(cand), dtype=bool)
        for (x0, x1), (y0, y1) in boxes:
            inside |= ((cand[:, 0] >= x0) & (cand[:, 0] <= x1)
                       & (cand[:, 1] >= y0) & (cand[:, 1] <= y1))
        keep = cand[inside][:n - filled]
        out[filled:filled + len(keep)] = keep
        filled += len(keep)
    return out


def in_lshape(points, boxes) -> np.ndarray:
    pts = np.atleast_2d(points)
    inside = np.zeros(len(pts), dtype=bool)
    for (x0, x1), (y0, y1) in boxes:
        inside |= ((pts[:, 0] >= x0) & (pts[:, 0] <= x1)
                   & (pts[:, 1] >= y0) & (pts[:, 1] <= y1))
    return inside


def generate_sinusoid_data(n: int, seed: int, boxes=DEFAULT_LSHAPE,
                           role: str = "training") -> Dataset:
    """(x, u, f(x, u)) tuples with x uniform over the L-shape, u uniform over U."""
    spec, step = get_system("sinusoid2d")
    rng = np.random.default_rng(seed)
    x = sample_lshape(n, boxes, rng)
    u = rng.uniform(spec.control_box[:, 0], spec.control_box[:, 1], size=(n, spec.dim_u))
    y = step(x, u) if n else np.empty((0, spec.dim_x))
    return Dataset(x, u, y, role=role)


def generate_quadrotor_data(n: int, seed: int = 0, scaled_controls: bool = True,
                            halton_start: int = 1, role: str = "training",
                            iid: bool = False) -> Dataset:
    """Halton (or, for estimation sets, i.i.d. uniform) quadrotor samples.

    scaled_controls multiplies each control by an extra Halton coordinate in
    [0, 1], concentrating some samples near u = 0 (needed for hold
    certificates at desk-scale N). iid=True draws pseudo-random uniform
    samples instead (the estimation set must be i.i.d.).
    """
    spec, step = get_system("quadrotor6d")
    dims = spec.dim_x + spec.dim_u
    if iid:
        rng = np.random.default_rng(seed)
        unit = rng.uniform(size=(n, dims + 1))
    else:
        unit = halton_points(n, dims + 1, start_index=halton_start) if n \
            else np.empty((0, dims + 1))
    x = _scale_to_box(unit[:, :spec.dim_x], spec.state_box)
    u = _scale_to_box(unit[:, spec.dim_x:dims], spec.control_box)
    if scaled_controls:
        u = u * unit[:, dims:dims + 1]
    y = step(x, u) if n else np.empty((0, spec.dim_x))
    return Dataset(x, u, y, role=role)

"""Learned control-affine dynamics g(x, u) = g0(x) + g1(x) u.

g0 and g1 are one-hidden-layer MLPs (g0 may be replaced by the exact identity
when the drift term is known). Training is plain mini-batch SGD with a fixed
step so runs are reproducible from a seed alone.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SystemSpec, get_system

MODEL_FORMAT_VERSION = 1


class ModelError(ValueError):
    """Raised on dimension mismatches, malformed files or training divergence."""


def _act(name):
    if name == "tanh":
        return np.tanh, lambda h: 1.0 - h * h       # derivative in terms of tanh output
    if name == "relu":
        return (lambda z: np.maximum(z, 0.0)), lambda h: (h > 0.0).astype(float)
    raise ModelError(f"unknown activation {name!r}")


@dataclass
class Mlp:
    """One-hidden-layer perceptron: out = W2 act(W1 x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        h, din = self.w1.shape
        dout, h2 = self.w2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (dout,):
            raise ModelError("MLP layer dimensions do not chain")
        for p in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(p)):
                raise ModelError("MLP has non-finite parameters")
        _act(self.activation)

    @property
    def dim_in(self):
        return self.w1.shape[1]

    @property
    def dim_out(self):
        return self.w2.shape[0]

    def forward(self, x):
        """Evaluate on a (n, dim_in) batch; returns (n, dim_out)."""
        f, _ = _act(self.activation)
        return f(x @ self.w1.T + self.b1) @ self.w2.T + self.b2

    @staticmethod
    def init(dim_in, dim_out, hidden, rng, activation="tanh"):
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
        s1 = 1.0 / np.sqrt(dim_in)
        s2 = 1.0 / np.sqrt(hidden)
        return Mlp(
            w1=rng.uniform(-s1, s1, size=(hidden, dim_in)),
            b1=rng.uniform(-s1, s1, size=hidden),
            w2=rng.uniform(-s2, s2, size=(dim_out, hidden)),
            b2=rng.uniform(-s2, s2, size=dim_out),
            activation=activation,
        )


@dataclass
class Dataset:
    """Sample triples (x, u, y = f(x, u)) with a role tag ('training' or 'lipschitz')."""

    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    role: str = "training"

    def __post_init__(self):
        if not (len(self.x) == len(self.u) == len(self.y)):
            raise ModelError("dataset arrays have mismatched lengths")
        if self.x.shape[1] != self.y.shape[1]:
            raise ModelError("state and successor dimensions differ")

    def __len__(self):
        return len(self.x)

    @property
    def xu(self):
        """Concatenated (x, u) pairs, shape (n, dim_x + dim_u)."""
        return np.hstack([self.x, self.u])

    def subset(self, idx):
        return Dataset(self.x[idx], self.u[idx], self.y[idx], role=self.role)


def save_dataset_csv(ds: Dataset, path):
    """CSV with one row per sample, columns x0..x{n-1}, u0..u{m-1}, y0..y{n-1}."""
    n, m = ds.x.shape[1], ds.u.shape[1]
    header = [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)] + [f"y{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in (*ds.x[i], *ds.u[i], *ds.y[i])]
            w.writerow(row)


def load_dataset_csv(path, role="training") -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(1 for c in header if c.startswith("x"))
        m = sum(1 for c in header if c.startswith("u"))
        rows = [list(map(float, r)) for r in reader]
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(header)))
    return Dataset(data[:, :n], data[:, n:n + m], data[:, n + m:], role=role)


@dataclass
class ControlAffineModel:
    """Learned g(x, u) = g0(x) + g1(x) u for one system.

    g1 maps a state to a dim_x x dim_u matrix (row-major network output).
    With g0_is_identity the drift is exactly x and g0 is None.
    """

    g1: Mlp
    system: SystemSpec
    g0: Mlp | None = None
    g0_is_identity: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, m = self.system.dim_x, self.system.dim_u
        if self.g0_is_identity != (self.g0 is None):
            raise ModelError("g0_is_identity flag inconsistent with g0 network")
        if self.g0 is not None and (self.g0.dim_in != n or self.g0.dim_out != n):
            raise ModelError("g0 network dimensions do not match the system")
        if self.g1.dim_in != n or self.g1.dim_out != n * m:
            raise ModelError("g1 network dimensions do not match the system")

    def _xb(self, x):
        arr = np.asarray(x, dtype=float)
        squeeze = arr.ndim == 1
        if squeeze:
            arr = arr[None, :]
        if arr.shape[1] != self.system.dim_x:
            raise ModelError(f"state dimension {arr.shape[1]} != {self.system.dim_x}")
        return arr, squeeze


def eval_g0(m: ControlAffineModel, x):
    """Drift term g0(x); the identity shortcut returns x exactly."""
    xb, squeeze = m._xb(x)
    out = xb.copy() if m.g0_is_identity else m.g0.forward(xb)
    return out[0] if squeeze else out


def eval_g1(m: ControlAffineModel, x):
    """Control matrix g1(x), shape (dim_x, dim_u) (batched: (n, dim_x, dim_u))."""
    xb, squeeze = m._xb(x)
    flat = m.g1.forward(xb)
    mats = flat.reshape(len(xb), m.system.dim_x, m.system.dim_u)
    return mats[0] if squeeze else mats


def eval_model(m: ControlAffineModel, x, u):
    """g0(x) + g1(x) u. Deterministic; accepts single vectors or batches."""
    xb, squeeze = m._xb(x)
    ub = np.asarray(u, dtype=float)
    if ub.ndim == 1:
        ub = ub[None, :]
    if ub.shape != (len(xb), m.system.dim_u):
        raise ModelError(f"control batch shape {ub.shape} does not match ({len(xb)}, {m.system.dim_u})")
    g1 = eval_g1(m, xb)
    out = eval_g0(m, xb) + np.einsum("nij,nj->ni", g1, ub)
    return out[0] if squeeze else out


@dataclass
class Hyperparams:
    hidden_g0: int = 128
    hidden_g1: int = 512
    lr: float = 1e-3
    epochs: int = 2000
    batch_size: int = 256
    target_mse: float = 1e-4
    activation: str = "tanh"
    g0_identity: bool = False
    seed: int = 0
    momentum: float = 0.0        # heavy-ball coefficient when optimizer == "sgd"
    optimizer: str = "sgd"       # "sgd" | "adam" (both seeded and deterministic)


def _forward_cached(net: Mlp, x):
    """Forward pass returning (output, hidden activation) for gradient reuse."""
    f, _ = _act(net.activation)
    h = f(x @ net.w1.T + net.b1)
    return h @ net.w2.T + net.b2, h


class _OptState:
    """Per-network optimizer state (heavy-ball velocity or Adam moments)."""

    def __init__(self, net: Mlp):
        shapes = (net.w1, net.b1, net.w2, net.b2)
        self.vel = [np.zeros_like(p) for p in shapes]
        self.m = [np.zeros_like(p) for p in shapes]
        self.v = [np.zeros_like(p) for p in shapes]
        self.t = 0


def _backprop_step(net: Mlp, x, h, dout, hp: Hyperparams, state: _OptState):
    """One in-place optimizer step from d loss / d output, reusing the cached hidden."""
    if net.activation == "tanh":
        dh = (dout @ net.w2) * (1.0 - h * h)
    else:
        dh = (dout @ net.w2) * (h > 0.0)
    grads = (dh.T @ x, dh.sum(axis=0), dout.T @ h, dout.sum(axis=0))
    params = (net.w1, net.b1, net.w2, net.b2)
    if hp.optimizer == "adam":
        state.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1 ** state.t
        c2 = 1.0 - b2 ** state.t
        for m, v, p, g in zip(state.m, state.v, params, grads):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= hp.lr * (m / c1) / (np.sqrt(v / c2) + eps)
    elif hp.momentum > 0.0:
        for v, p, g in zip(state.vel, params, grads):
            v *= hp.momentum
            v += g
            p -= hp.lr * v
    else:
        for p, g in zip(params, grads):
            p -= hp.lr * g


def model_mse(m: ControlAffineModel, ds: Dataset) -> float:
    """Mean over samples of the squared 2-norm one-step error."""
    pred = eval_model(m, ds.x, ds.u)
    return float(np.mean(np.sum((pred - ds.y) ** 2, axis=1)))


def train_model(S: Dataset, hp: Hyperparams, system: SystemSpec | str) -> ControlAffineModel:
    """Fit g by minimizing mean squared one-step error over S.

    Mini-batch SGD with a fixed step; everything (init, shuffling) is drawn
    from hp.seed, so identical inputs give bitwise-identical parameters.
    Keeps the best-so-far parameters by full-set MSE; if target_mse is not
    reached, returns the best model with meta["target_met"] = False.
    """
    if isinstance(system, str):
        system, _ = get_system(system)
    if len(S) == 0:
        raise ModelError("cannot train on an empty dataset")
    n, mdim = system.dim_x, system.dim_u
    if S.x.shape[1] != n or S.u.shape[1] != mdim:
        raise ModelError("dataset dimensions do not match the system")

    rng = np.random.default_rng(hp.seed)
    g0 = None if hp.g0_identity else Mlp.init(n, n, hp.hidden_g0, rng, hp.activation)
    g1 = Mlp.init(n, n * mdim, hp.hidden_g1, rng, hp.activation)
    model = ControlAffineModel(g1=g1, system=system, g0=g0, g0_is_identity=hp.g0_identity)
    if hp.optimizer not in ("sgd", "adam"):
        raise ModelError(f"unknown optimizer {hp.optimizer!r}")
    opt = {id(net): _OptState(net) for net in ((g1,) if g0 is None else (g1, g0))}

    nsamp = len(S)
    batch = min(hp.batch_size, nsamp)
    best = None
    best_mse = np.inf

    for epoch in range(hp.epochs):
        order = rng.permutation(nsamp)
        pre_epoch = _snapshot(model)
        sqsum = 0.0
        for lo in range(0, nsamp, batch):
            idx = order[lo:lo + batch]
            xb, ub, yb = S.x[idx], S.u[idx], S.y[idx]
            flat, h1 = _forward_cached(model.g1, xb)
            pred = np.einsum("bij,bj->bi", flat.reshape(len(idx), n, mdim), ub)
            if g0 is not None:
                g0_out, h0 = _forward_cached(g0, xb)
                pred += g0_out
            else:
                pred += xb
            resid = pred - yb
            sqsum += float(np.sum(resid * resid))
            dpred = (2.0 / len(idx)) * resid
            if not np.all(np.isfinite(dpred)):
                raise ModelError(f"training diverged at epoch {epoch}")
            # d loss / d g1_flat[b, i*m + j] = dpred[b, i] * u[b, j]  (row-major layout)
            dg1 = np.einsum("bi,bj->bij", dpred, ub).reshape(len(idx), n * mdim)
            _backprop_step(model.g1, xb, h1, dg1, hp, opt[id(model.g1)])
            if g0 is not None:
                _backprop_step(g0, xb, h0, dpred, hp, opt[id(g0)])
        # loss of the pre-epoch parameters (exact in full-batch mode)
        mse = sqsum / nsamp
        if not np.isfinite(mse):
            raise ModelError(f"training diverged at epoch {epoch}")
        if mse < best_mse:
            best_mse = mse
            best = pre_epoch
        if best_mse <= hp.target_mse:
            break

    final = model_mse(model, S)
    if final < best_mse:
        best_mse = final
    elif best is not None:
        _restore(model, best)
    model.meta = {
        "final_mse": best_mse,
        "target_mse": hp.target_mse,
        "target_met": bool(best_mse <= hp.target_mse),
        "epochs_run": epoch + 1,
        "seed": hp.seed,
    }
    return model


def _snapshot(m: ControlAffineModel):
    nets = [m.g1] + ([] if m.g0 is None else [m.g0])
    return [(net.w1.copy(), net.b1.copy(), net.w2.copy(), net.b2.copy()) for net in nets]


def _restore(m: ControlAffineModel, snap):
    nets = [m.g1] + ([] if m.g0 is None else [m.g0])
    for net, (w1, b1, w2, b2) in zip(nets, snap):
        net.w1, net.b1, net.w2, net.b2 = w1, b1, w2, b2


def _mlp_to_json(net: Mlp):
    return {
        "w1": net.w1.tolist(),
        "b1": net.b1.tolist(),
        "w2": net.w2.tolist(),
        "b2": net.b2.tolist(),
    }


def _mlp_from_json(obj, activation):
    try:
        return Mlp(
            w1=np.array(obj["w1"], dtype=float),
            b1=np.array(obj["b1"], dtype=float),
            w2=np.array(obj["w2"], dtype=float),
            b2=np.array(obj["b2"], dtype=float),
            activation=activation,
        )
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed network block: {exc}") from exc


def save_model(m: ControlAffineModel, path):
    """Single JSON document; floats serialized via repr so round-trips are bit-exact."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "system": m.system.name,
        "activation": m.g1.activation,
        "g0": {"identity": True} if m.g0_is_identity else _mlp_to_json(m.g0),
        "g1": _mlp_to_json(m.g1),
        "meta": m.meta,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> ControlAffineModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed model file {path}: {exc}") from exc
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ModelError(
            f"model format version {doc.get('version')!r} != {MODEL_FORMAT_VERSION}"
        )
    system, _ = get_system(doc["system"])
    activation = doc["activation"]
    g0_obj = doc["g0"]
    identity = bool(g0_obj.get("identity", False)) if isinstance(g0_obj, dict) else False
    g0 = None if identity else _mlp_from_json(g0_obj, activation)
    g1 = _mlp_from_json(doc["g1"], activation)
    return ControlAffineModel(
        g1=g1, system=system, g0=g0, g0_is_identity=identity, meta=doc.get("meta", {})
    )

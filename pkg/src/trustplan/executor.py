"""Closed- and open-loop execution of planned trajectories under true dynamics.

The closed loop applies the nominal first control, then re-solves the linear
equation at every visited state so the model returns to the plan in one step.
Applied controls are clipped to the control box (an actuator limit); for
certified plans the clip is provably inactive and execution records it if it
ever fires.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .feedback import FeedbackSolveError, solve_one_step
from .model import ControlAffineModel
from .planner import Trajectory, in_collision


class ExecutionError(ValueError):
    """Invalid execution inputs (empty plan, missing goal certificate)."""


@dataclass
class ExecutionTrace:
    """States and controls realized by running a plan on the true dynamics."""

    nominal: Trajectory
    executed_states: np.ndarray
    applied_controls: np.ndarray
    per_step_err: np.ndarray
    mode: str                       # "closed" | "open" | "hold"
    solve_failed_at: int | None = None
    clamped_steps: list = field(default_factory=list)
    collided_at: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def max_track_err(self) -> float:
        return float(np.max(self.per_step_err)) if len(self.per_step_err) else 0.0

    def goal_err(self, x_g) -> float:
        return float(np.linalg.norm(self.executed_states[-1] - np.asarray(x_g)))


@dataclass
class TrackingStats:
    """Mean / sample std / worst case of an error metric over runs."""

    mean: float
    std: float
    worst: float
    n: int

    @staticmethod
    def of(values) -> "TrackingStats":
        v = np.asarray(values, dtype=float)
        if len(v) == 0:
            raise ExecutionError("cannot aggregate an empty trace collection")
        std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        return TrackingStats(mean=float(v.mean()), std=std, worst=float(v.max()), n=len(v))


def _clip_control(u, box, clamped, k):
    clipped = np.clip(u, box[:, 0], box[:, 1])
    if not np.array_equal(clipped, u):
        clamped.append(k)
    return clipped


def execute_closed_loop(f, m: ControlAffineModel, plan: Trajectory,
                        obstacles=None, position_dims=None) -> ExecutionTrace:
    """Run the one-step feedback law under true dynamics f.

    Step 0 applies the nominal control open-loop; from step 1 on the control
    solves g1(x~_k) u = x_{k+1} - g0(x~_k). A failed solve truncates the trace
    and flags the step (a certified plan should never hit it).
    """
    xs, us = plan.states, plan.controls
    if len(xs) == 0:
        raise ExecutionError("empty plan")
    box = m.system.control_box
    executed = [xs[0].copy()]
    applied = []
    clamped = []
    failed_at = None

    for k in range(len(us)):
        if k == 0:
            u = us[0].copy()
        else:
            try:
                u = solve_one_step(m, executed[k], xs[k + 1])
            except FeedbackSolveError:
                failed_at = k
                break
        u = _clip_control(u, box, clamped, k)
        applied.append(u)
        executed.append(np.asarray(f(executed[k], u), dtype=float))

    executed = np.array(executed)
    per_step = np.linalg.norm(executed - xs[:len(executed)], axis=1)
    trace = ExecutionTrace(
        nominal=plan,
        executed_states=executed,
        applied_controls=np.array(applied) if applied else np.empty((0, box.shape[0])),
        per_step_err=per_step,
        mode="closed",
        solve_failed_at=failed_at,
        clamped_steps=clamped,
    )
    if obstacles:
        for i, x in enumerate(executed):
            if in_collision(x, 0.0, obstacles, position_dims):
                trace.collided_at = i
                break
    return trace


def execute_open_loop(f, m: ControlAffineModel, plan: Trajectory,
                      obstacles=None, position_dims=None) -> ExecutionTrace:
    """Apply the nominal control sequence blindly from the start state."""
    xs, us = plan.states, plan.controls
    if len(xs) == 0:
        raise ExecutionError("empty plan")
    executed = [xs[0].copy()]
    for k in range(len(us)):
        executed.append(np.asarray(f(executed[k], us[k]), dtype=float))
    executed = np.array(executed)
    trace = ExecutionTrace(
        nominal=plan,
        executed_states=executed,
        applied_controls=us.copy(),
        per_step_err=np.linalg.norm(executed - xs, axis=1),
        mode="open",
    )
    if obstacles:
        for i, x in enumerate(executed):
            if in_collision(x, 0.0, obstacles, position_dims):
                trace.collided_at = i
                break
    return trace


def hold_at_goal(f, m: ControlAffineModel, plan: Trajectory, n_hold: int,
                 x_start=None) -> ExecutionTrace:
    """Repeatedly solve for the terminal state to stay near the goal.

    Starts from x_start (default: the nominal terminal state) and runs n_hold
    feedback steps all targeting x_K.
    """
    if plan.goal_cert is None or not plan.goal_cert.exists:
        raise ExecutionError("hold_at_goal requires a passing goal certificate")
    x_k = plan.states[-1]
    box = m.system.control_box
    executed = [np.asarray(x_start if x_start is not None else x_k, dtype=float).copy()]
    applied = []
    clamped = []
    failed_at = None
    for k in range(n_hold):
        try:
            u = solve_one_step(m, executed[-1], x_k)
        except FeedbackSolveError:
            failed_at = k
            break
        u = _clip_control(u, box, clamped, k)
        applied.append(u)
        executed.append(np.asarray(f(executed[-1], u), dtype=float))
    executed = np.array(executed)
    return ExecutionTrace(
        nominal=plan,
        executed_states=executed,
        applied_controls=np.array(applied) if applied else np.empty((0, box.shape[0])),
        per_step_err=np.linalg.norm(executed - x_k[None, :], axis=1),
        mode="hold",
        solve_failed_at=failed_at,
        clamped_steps=clamped,
    )


def aggregate_stats(traces, x_goals) -> dict:
    """Tracking-error table over runs: {metric: TrackingStats}.

    traces is a list of (closed, open) trace pairs aligned with x_goals.
    """
    if not traces:
        raise ExecutionError("cannot aggregate an empty trace collection")
    cl_max, cl_goal, ol_max, ol_goal = [], [], [], []
    for (cl, ol), xg in zip(traces, x_goals):
        cl_max.append(cl.max_track_err)
        cl_goal.append(cl.goal_err(xg))
        ol_max.append(ol.max_track_err)
        ol_goal.append(ol.goal_err(xg))
    return {
        "max_track_err_cl": TrackingStats.of(cl_max),
        "goal_err_cl": TrackingStats.of(cl_goal),
        "max_track_err_ol": TrackingStats.of(ol_max),
        "goal_err_ol": TrackingStats.of(ol_goal),
    }


_ROW_LABELS = [
    ("max_track_err_cl", "Max. trck. err. (CL)"),
    ("goal_err_cl", "Goal error (CL)"),
    ("max_track_err_ol", "Max. trck. err. (OL)"),
    ("goal_err_ol", "Goal error (OL)"),
]


def stats_table_text(columns: dict) -> str:
    """Aligned text table, one column per method, mean +/- std (worst)."""
    names = list(columns)
    width = max(24, *(len(n) + 2 for n in names))
    header = f"{'':26s}" + "".join(f"{n:>{width}s}" for n in names)
    lines = [header]
    for key, label in _ROW_LABELS:
        cells = []
        for n in names:
            s = columns[n][key]
            cells.append(f"{s.mean:.3f} +/- {s.std:.3f} ({s.worst:.3f})")
        lines.append(f"{label:26s}" + "".join(f"{c:>{width}s}" for c in cells))
    return "\n".join(lines) + "\n"


def stats_table_csv(columns: dict, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "method", "mean", "std", "worst", "n"])
        for key, _ in _ROW_LABELS:
            for name, stats in columns.items():
                s = stats[key]
                w.writerow([key, name, repr(s.mean), repr(s.std), repr(s.worst), s.n])


def trace_to_csv(trace: ExecutionTrace, path):
    """Per-step CSV: step, nominal state, executed state, applied control, error."""
    xs = trace.nominal.states
    dim_x = xs.shape[1]
    dim_u = trace.applied_controls.shape[1] if len(trace.applied_controls) else 0
    header = (["step"]
              + [f"nominal_x{i}" for i in range(dim_x)]
              + [f"executed_x{i}" for i in range(dim_x)]
              + [f"applied_u{j}" for j in range(dim_u)]
              + ["per_step_err"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(trace.executed_states)):
            nominal = xs[k] if k < len(xs) else xs[-1]
            u = trace.applied_controls[k] if k < len(trace.applied_controls) \
                else np.full(dim_u, np.nan)
            row = ([k]
                   + [repr(float(v)) for v in nominal]
                   + [repr(float(v)) for v in trace.executed_states[k]]
                   + [repr(float(v)) for v in u]
                   + [repr(float(trace.per_step_err[k]))])
            w.writerow(row)

"""End-to-end experiment pipeline and its file artifacts.

Stages (gen-data, train, estimate, select-domain, plan, execute, evaluate,
plot) are individually invokable and composable: each reads its inputs from
the output directory of the previous one. Every JSON artifact embeds the tool
version, a hash of the resolved configuration and the stage seed, so a rerun
with the same config reproduces identical files.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .datagen import DEFAULT_LSHAPE, generate_quadrotor_data, generate_sinusoid_data
from .domain import (
    DomainFailure,
    TrustedDomain,
    domain_summary,
    error_stats,
    expand_radius,
    filter_sd,
    load_domain,
    save_domain,
    select_r_and_domain,
)
from .dynamics import get_system
from .executor import (
    aggregate_stats,
    execute_closed_loop,
    execute_open_loop,
    hold_at_goal,
    stats_table_csv,
    stats_table_text,
    trace_to_csv,
)
from .feedback import goal_invariance_check
from .lipschitz import SlopeSampleConfig, estimate_report
from .model import (
    Dataset,
    Hyperparams,
    load_dataset_csv,
    load_model,
    model_mse,
    save_dataset_csv,
    save_model,
    train_model,
)
from .planner import (
    AxisBox,
    PlannerConfig,
    PlanProblem,
    PlanTimeout,
    Trajectory,
    audit_trajectory,
    in_collision,
    plan,
)
from .plotting import plot_plan_svg


class StageFailure(RuntimeError):
    """A pipeline stage could not produce its artifact (CLI exit code 2)."""


DEFAULT_CONFIGS = {
    "sinusoid2d": {
        "system": "sinusoid2d",
        "seed": 0,
        "n_train": 2000,
        "m_lipschitz": 500,
        "lshape": [list(map(list, b)) for b in DEFAULT_LSHAPE],
        "hyperparams": {
            "hidden_g0": 128,
            "hidden_g1": 512,
            "lr": 0.02,
            "epochs": 3000,
            "batch_size": 250,
            "target_mse": 2e-5,
            "activation": "tanh",
            "g0_identity": False,
        },
        "a": 3.0,
        "rho": 0.975,
        "alpha_step": None,
        "r_plan": 0.35,
        "estimate": {"n_s": 50, "n_l": 400, "strategy": "local"},
        "planner": {
            "n_samples": 20,
            "goal_bias": 0.15,
            "sampling": "train-perturb",
            "max_iters": 6000,
            "collision_radius_extra": 0.0,
        },
        "naive_planner": {
            "n_samples": 20,
            "goal_bias": 0.15,
            "sampling": "uniform",
            "max_iters": 60000,
        },
        "execute": {"n_hold": 100},
        "evaluate": {
            "n_pairs": 10,
            "pair_min_dist": 1.0,
            "pair_max_dist": 3.0,
            "max_pair_attempts": 300,
            "include_naive": True,
            "workers": 1,
        },
        "obstacles": [],
        "scaled_controls": False,
    },
    "quadrotor6d": {
        "system": "quadrotor6d",
        "seed": 0,
        "n_train": 200000,
        "m_lipschitz": 50000,
        "lshape": None,
        "hyperparams": {
            "hidden_g0": 64,
            "hidden_g1": 256,
            "lr": 0.05,
            "epochs": 120,
            "batch_size": 1024,
            "target_mse": 2e-6,
            "activation": "tanh",
            "g0_identity": True,
        },
        "a": 6.0,
        "rho": 0.975,
        "alpha_step": None,
        "r_plan": 0.2,
        "estimate": {"n_s": 50, "n_l": 300, "strategy": "local"},
        "planner": {
            "n_samples": 30,
            "goal_bias": 0.15,
            "sampling": "train-perturb",
            "max_iters": 8000,
            "collision_radius_extra": 0.0,
        },
        "naive_planner": {
            "n_samples": 30,
            "goal_bias": 0.15,
            "sampling": "uniform",
            "max_iters": 60000,
        },
        "execute": {"n_hold": 100},
        "evaluate": {
            "n_pairs": 10,
            "pair_min_dist": 0.8,
            "pair_max_dist": 2.0,
            "max_pair_attempts": 600,
            "include_naive": True,
            "workers": 1,
        },
        "obstacles": [
            {"min": [-0.10, -1.0, -1.0], "max": [0.10, 0.25, 1.0]},
            {"min": [-0.10, 0.55, -1.0], "max": [0.10, 1.0, 1.0]},
            {"min": [-0.60, -0.20, -0.35], "max": [-0.30, 0.20, 0.35]},
        ],
        "scaled_controls": True,
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(config_path=None, system=None, seed=None, out=None) -> dict:
    """Resolve a run configuration from defaults, a config file and overrides.

    Without an explicit path, a previously resolved out/config.json is reused
    so later stages see exactly what earlier stages saw.
    """
    override = {}
    if config_path is None and out is not None:
        candidate = os.path.join(out, "config.json")
        if os.path.exists(candidate):
            config_path = candidate
    if config_path is not None:
        with open(config_path) as fh:
            override = json.load(fh)
    name = system or override.get("system")
    if name is None:
        raise StageFailure("no system given: pass --system or a config with a 'system' key")
    if name not in DEFAULT_CONFIGS:
        raise StageFailure(f"unknown system {name!r}; known: {sorted(DEFAULT_CONFIGS)}")
    cfg = _merge(DEFAULT_CONFIGS[name], override)
    cfg["system"] = name
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _stamp(cfg: dict, seed) -> dict:
    return {
        "version": f"trustplan-v{__version__}",
        "config_hash": config_hash(cfg),
        "seed": int(seed),
    }


def write_json(path, payload: dict, cfg: dict, seed) -> None:
    doc = dict(payload)
    doc["tool"] = _stamp(cfg, seed)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def _path(out, name):
    return os.path.join(out, name)


def save_resolved_config(cfg, out):
    os.makedirs(out, exist_ok=True)
    with open(_path(out, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)


def _obstacles(cfg):
    return [AxisBox.make(o["min"], o["max"]) for o in cfg.get("obstacles", [])]


def _seed_stream(cfg, *tags):
    entropy = [cfg["seed"] & 0x7FFFFFFF] + [hash(t) & 0xFFFF for t in tags]
    return np.random.SeedSequence(entropy)


def _sub_seed(cfg, *tags) -> int:
    return int(_seed_stream(cfg, *tags).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_gen_data(cfg, out):
    """Write the training set S and the i.i.d. estimation set Psi as CSV."""
    os.makedirs(out, exist_ok=True)
    save_resolved_config(cfg, out)
    name = cfg["system"]
    seed = _sub_seed(cfg, "gen-data")
    if name == "sinusoid2d":
        boxes = [tuple(map(tuple, b)) for b in cfg["lshape"]]
        train = generate_sinusoid_data(cfg["n_train"], seed, boxes=boxes)
        psi = generate_sinusoid_data(cfg["m_lipschitz"], seed + 1, boxes=boxes,
                                     role="lipschitz")
    else:
        train = generate_quadrotor_data(cfg["n_train"], scaled_controls=cfg["scaled_controls"])
        psi = generate_quadrotor_data(cfg["m_lipschitz"], seed=seed + 1,
                                      scaled_controls=cfg["scaled_controls"],
                                      role="lipschitz", iid=True)
    train_path = _path(out, "train.csv")
    psi_path = _path(out, "psi.csv")
    save_dataset_csv(train, train_path)
    save_dataset_csv(psi, psi_path)
    write_json(_path(out, "gen_meta.json"), {
        "system": name,
        "n_train": len(train),
        "m_lipschitz": len(psi),
        "scaled_controls": bool(cfg.get("scaled_controls")),
    }, cfg, seed)
    return train_path, psi_path


def _require(path, stage, needed_by):
    if not os.path.exists(path):
        raise StageFailure(f"{needed_by}: missing {path} (run the {stage} stage first)")
    return path


def stage_train(cfg, out):
    save_resolved_config(cfg, out)
    train = load_dataset_csv(_require(_path(out, "train.csv"), "gen-data", "train"))
    hp = Hyperparams(seed=_sub_seed(cfg, "train"), **cfg["hyperparams"])
    t0 = time.perf_counter()
    model = train_model(train, hp, cfg["system"])
    model_path = _path(out, "model.json")
    save_model(model, model_path)
    write_json(_path(out, "train_report.json"), {
        "mse": model.meta["final_mse"],
        "target_met": model.meta["target_met"],
        "epochs_run": model.meta["epochs_run"],
        "wall_time": time.perf_counter() - t0,
    }, cfg, hp.seed)
    return model_path


def _load_common(cfg, out, stage):
    train = load_dataset_csv(_require(_path(out, "train.csv"), "gen-data", stage))
    model = load_model(_require(_path(out, "model.json"), "train", stage))
    _, dyn = get_system(cfg["system"])
    return train, model, dyn


def _slope_cfg(cfg, seed):
    est = cfg["estimate"]
    return SlopeSampleConfig(n_s=est["n_s"], n_l=est["n_l"],
                             strategy=est["strategy"], seed=seed)


def _psi_if_needed(cfg, out, stage):
    if cfg["estimate"]["strategy"] != "psi":
        return None
    return load_dataset_csv(_require(_path(out, "psi.csv"), "gen-data", stage),
                            role="lipschitz")


def stage_select_domain(cfg, out):
    """Alg. 2 radius selection, then growth to the planning radius r_plan."""
    save_resolved_config(cfg, out)
    train, model, dyn = _load_common(cfg, out, "select-domain")
    psi = _psi_if_needed(cfg, out, "select-domain")
    mu, sigma, errors = error_stats(train, model)
    s_d, idx = filter_sd(train, errors, mu, sigma, cfg["a"])
    e_t = float(errors[idx].max())
    scfg = _slope_cfg(cfg, _sub_seed(cfg, "select-domain"))
    td = select_r_and_domain(s_d, idx, e_t, model, dyn, mu, sigma, cfg["a"],
                             scfg, cfg["rho"], alpha_step=cfg.get("alpha_step"),
                             psi=psi)
    r_plan = cfg.get("r_plan")
    if r_plan is not None and r_plan > td.r:
        td = expand_radius(td, float(r_plan), model, dyn, scfg, psi=psi)
    td.meta["mu"] = mu
    td.meta["sigma"] = sigma
    domain_path = _path(out, "domain.json")
    save_domain(td, domain_path)
    write_json(_path(out, "domain_report.json"), domain_summary(td), cfg, scfg.seed)
    return domain_path


def stage_estimate(cfg, out, r=None):
    """Diagnostic Alg. 1 runs for the three constants at a fixed radius.

    Default radius: the filtered-set threshold mu + a*sigma (Alg. 2's starting
    point) or the selected domain's radius when domain.json already exists.
    """
    save_resolved_config(cfg, out)
    train, model, dyn = _load_common(cfg, out, "estimate")
    psi = _psi_if_needed(cfg, out, "estimate")
    mu, sigma, errors = error_stats(train, model)
    s_d, idx = filter_sd(train, errors, mu, sigma, cfg["a"])
    if r is None:
        if os.path.exists(_path(out, "domain.json")):
            td = load_domain(_path(out, "domain.json"), train)
            r = td.r
        else:
            r = mu + cfg["a"] * sigma
    seed = _sub_seed(cfg, "estimate")
    scfg = _slope_cfg(cfg, seed)
    from .domain import _default_estimator  # shared closure with the selection loop

    estimator = _default_estimator(model, dyn, psi=psi)
    paths = []
    for target, points in (("fg", s_d.xu), ("g0", s_d.x), ("g1", s_d.x)):
        est = estimator(target, points, float(r), scfg, cfg["rho"],
                        _sub_seed(cfg, "estimate", target))
        rep = estimate_report(est)
        rep["r"] = float(r)
        path = _path(out, f"estimate_{target}.json")
        write_json(path, rep, cfg, seed)
        paths.append(path)
        if not est.ks_pass:
            raise DomainFailure(
                "ks_rejected",
                f"estimate stage: KS rejected {target} (p={est.fit.ks_p:.4g})", est)
    return paths


def _planner_cfg(cfg, naive, seed):
    block = cfg["naive_planner" if naive else "planner"]
    return PlannerConfig(
        n_samples=block["n_samples"],
        goal_bias=block["goal_bias"],
        sampling=block["sampling"],
        max_iters=block["max_iters"],
        seed=seed,
        naive_mode=naive,
        collision_radius_extra=block.get("collision_radius_extra", 0.0),
    )


def plan_to_dict(traj: Trajectory, prob: PlanProblem):
    return {
        "problem": {
            "start": traj.states[0].tolist(),
            "goal": prob.x_g.tolist(),
            "lambda": prob.lam,
            "obstacles": [b.to_dict() for b in prob.obstacles],
            "system": prob.system.name,
        },
        "states": traj.states.tolist(),
        "controls": traj.controls.tolist(),
        "certificates": [c.to_dict() for c in traj.certificates if c is not None],
        "goal_cert": traj.goal_cert.to_dict() if traj.goal_cert else None,
        "seed": traj.meta.get("seed"),
        "iters": traj.meta.get("iters"),
        "tree_size": traj.meta.get("tree_size"),
        "wall_time": traj.meta.get("wall_time"),
        "naive": traj.meta.get("naive", False),
    }


def load_plan(path):
    with open(path) as fh:
        doc = json.load(fh)
    spec, _ = get_system(doc["problem"]["system"])
    prob = PlanProblem(
        x_i=np.array(doc["problem"]["start"]),
        x_g=np.array(doc["problem"]["goal"]),
        lam=doc["problem"]["lambda"],
        obstacles=[AxisBox.make(o["min"], o["max"]) for o in doc["problem"]["obstacles"]],
        system=spec,
    )
    from .feedback import OneStepCertificate

    goal_cert = None
    if doc.get("goal_cert"):
        gc = doc["goal_cert"]
        goal_cert = OneStepCertificate(
            exists=gc["exists"], u_pert=gc["u_pert"], sigma_min=gc["sigma_min"],
            nonsingular_margin=gc["nonsingular_margin"], control_ok=gc["control_ok"],
            in_domain=gc.get("in_domain", True),
        )
    traj = Trajectory(
        states=np.array(doc["states"]),
        controls=np.array(doc["controls"]) if doc["controls"] else
        np.empty((0, spec.dim_u)),
        certificates=[],
        goal_cert=goal_cert,
        meta={"seed": doc.get("seed"), "iters": doc.get("iters"),
              "naive": doc.get("naive", False), "wall_time": doc.get("wall_time")},
    )
    return traj, prob


def sample_eval_pair(cfg, model, td: TrustedDomain, rng):
    """Draw one feasible (start, goal) query by seeded rejection.

    Both endpoints come from the state projections of the filtered training
    set (so the tree can grow from the start); the goal must pass the hold
    certificate and both must clear obstacles with the eps-inflated margin.
    """
    spec = model.system
    ev = cfg["evaluate"]
    obstacles = _obstacles(cfg)
    extra = cfg["planner"].get("collision_radius_extra", 0.0)
    pts = td.index_x.points
    pos = spec.position_dims or None
    for _ in range(int(ev["max_pair_attempts"])):
        g = pts[rng.integers(0, len(pts))]
        if in_collision(g, td.epsilon + extra, obstacles, pos):
            continue
        if not goal_invariance_check(model, td, g).exists:
            continue
        for _ in range(40):
            s = pts[rng.integers(0, len(pts))]
            dist = np.linalg.norm(s - g)
            if not ev["pair_min_dist"] <= dist <= ev["pair_max_dist"]:
                continue
            if in_collision(s, td.epsilon + extra, obstacles, pos):
                continue
            return s.copy(), g.copy()
    raise StageFailure("could not sample a feasible start/goal pair "
                       f"in {ev['max_pair_attempts']} attempts")


def stage_plan(cfg, out, start=None, goal=None, naive=False, index=0, lam=None):
    """Plan one query; samples a feasible pair when start/goal are omitted."""
    save_resolved_config(cfg, out)
    train, model, dyn = _load_common(cfg, out, "plan")
    td = None
    if not naive or start is None or goal is None:
        td = load_domain(_require(_path(out, "domain.json"), "select-domain", "plan"), train)
    if start is None or goal is None:
        rng = np.random.default_rng(_sub_seed(cfg, "pair", index))
        start, goal = sample_eval_pair(cfg, model, td, rng)
    prob = PlanProblem(
        x_i=np.asarray(start, dtype=float),
        x_g=np.asarray(goal, dtype=float),
        lam=float(lam if lam is not None else cfg.get("lambda", _default_lambda(cfg, td))),
        obstacles=_obstacles(cfg),
        system=model.system,
    )
    pcfg = _planner_cfg(cfg, naive, _sub_seed(cfg, "plan", "naive" if naive else "lmtd", index))
    result = plan(model, None if naive else td, prob, pcfg)
    if isinstance(result, PlanTimeout):
        raise StageFailure(
            f"plan stage: search timed out after {result.iters} iterations "
            f"(tree size {result.tree_size}, best goal distance "
            f"{result.best_goal_distance:.4g})")
    prefix = "naive_plan" if naive else "plan"
    path = _path(out, f"{prefix}_{index:03d}.json")
    write_json(path, plan_to_dict(result, prob), cfg, pcfg.seed)
    return path


def _default_lambda(cfg, td: TrustedDomain | None):
    # Goal tolerance defaults to a domain-scaled value when not configured.
    if td is not None:
        return max(4.0 * td.epsilon, 0.25 * td.margin)
    return 0.25


def stage_execute(cfg, out, plan_path, hold=True):
    """Closed- and open-loop rollouts (plus goal holding) for a stored plan."""
    save_resolved_config(cfg, out)
    _require(plan_path, "plan", "execute")
    model = load_model(_require(_path(out, "model.json"), "train", "execute"))
    _, dyn = get_system(cfg["system"])
    traj, prob = load_plan(plan_path)
    pos = prob.system.position_dims or None
    base = os.path.splitext(os.path.basename(plan_path))[0]
    cl = execute_closed_loop(dyn, model, traj, obstacles=prob.obstacles, position_dims=pos)
    ol = execute_open_loop(dyn, model, traj, obstacles=prob.obstacles, position_dims=pos)
    paths = []
    for tag, tr in (("cl", cl), ("ol", ol)):
        p = _path(out, f"trace_{tag}_{base}.csv")
        trace_to_csv(tr, p)
        paths.append(p)
    summary = {
        "plan": os.path.basename(plan_path),
        "max_track_err_cl": cl.max_track_err,
        "max_track_err_ol": ol.max_track_err,
        "goal_err_cl": cl.goal_err(prob.x_g),
        "goal_err_ol": ol.goal_err(prob.x_g),
        "cl_solve_failed_at": cl.solve_failed_at,
        "cl_clamped_steps": cl.clamped_steps,
        "cl_collided_at": cl.collided_at,
        "ol_collided_at": ol.collided_at,
    }
    if hold and traj.goal_cert is not None and traj.goal_cert.exists:
        hd = hold_at_goal(dyn, model, traj, cfg["execute"]["n_hold"],
                          x_start=cl.executed_states[-1])
        p = _path(out, f"trace_hold_{base}.csv")
        trace_to_csv(hd, p)
        paths.append(p)
        summary["hold_max_dist_to_xk"] = hd.max_track_err
        summary["hold_solve_failed_at"] = hd.solve_failed_at
    write_json(_path(out, f"exec_{base}.json"), summary, cfg, cfg["seed"])
    return paths


# ---------------------------------------------------------------------------
# Full evaluation protocol
# ---------------------------------------------------------------------------


def _eval_one_pair(args):
    """Plan and execute one query (worker-pool friendly)."""
    (cfg, model, td, dyn_name, start, goal, lam, plan_seed, naive_seed) = args
    _, dyn = get_system(dyn_name)
    obstacles = _obstacles(cfg)
    prob = PlanProblem(x_i=start, x_g=goal, lam=lam, obstacles=obstacles,
                       system=model.system)
    pcfg = _planner_cfg(cfg, False, plan_seed)
    result = plan(model, td, prob, pcfg)
    if isinstance(result, PlanTimeout):
        return {"ok": False, "timeout": True, "tree_size": result.tree_size}
    issues = audit_trajectory(model, td, prob, result,
                              collision_extra=pcfg.collision_radius_extra)
    pos = model.system.position_dims or None
    cl = execute_closed_loop(dyn, model, result, obstacles=obstacles, position_dims=pos)
    ol = execute_open_loop(dyn, model, result, obstacles=obstacles, position_dims=pos)
    hd = hold_at_goal(dyn, model, result, cfg["execute"]["n_hold"],
                      x_start=cl.executed_states[-1])
    entry = {
        "ok": True, "plan": result, "prob": prob, "cl": cl, "ol": ol, "hold": hd,
        "audit_issues": issues,
    }
    if cfg["evaluate"].get("include_naive", True):
        npcfg = _planner_cfg(cfg, True, naive_seed)
        nresult = plan(model, None, prob, npcfg)
        if isinstance(nresult, PlanTimeout):
            entry["naive"] = None
        else:
            ncl = execute_closed_loop(dyn, model, nresult, obstacles=obstacles,
                                      position_dims=pos)
            nol = execute_open_loop(dyn, model, nresult, obstacles=obstacles,
                                    position_dims=pos)
            entry["naive"] = {"plan": nresult, "cl": ncl, "ol": nol}
    return entry


def stage_evaluate(cfg, out):
    """Reproduce the statistics protocol: n feasible queries, CL/OL rollouts,
    goal holding, naive baseline on the same queries, aggregate table."""
    save_resolved_config(cfg, out)
    t_start = time.perf_counter()
    if not os.path.exists(_path(out, "train.csv")):
        stage_gen_data(cfg, out)
    if not os.path.exists(_path(out, "model.json")):
        stage_train(cfg, out)
    if not os.path.exists(_path(out, "domain.json")):
        stage_select_domain(cfg, out)
    train, model, dyn = _load_common(cfg, out, "evaluate")
    td = load_domain(_path(out, "domain.json"), train)
    lam = float(cfg.get("lambda", _default_lambda(cfg, td)))
    ev = cfg["evaluate"]
    n_pairs = int(ev["n_pairs"])

    pair_rng = np.random.default_rng(_sub_seed(cfg, "pairs"))
    jobs = []
    attempts = 0
    collected = []
    max_attempts = int(ev["max_pair_attempts"])
    workers = int(ev.get("workers", 1))

    while len(collected) < n_pairs and attempts < max_attempts:
        batch = []
        need = n_pairs - len(collected)
        for i in range(need):
            start, goal = sample_eval_pair(cfg, model, td, pair_rng)
            idx = attempts + i
            batch.append((cfg, model, td, cfg["system"], start, goal, lam,
                          _sub_seed(cfg, "plan", "lmtd", idx),
                          _sub_seed(cfg, "plan", "naive", idx)))
        attempts += need
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_eval_one_pair, batch))
        else:
            results = [_eval_one_pair(b) for b in batch]
        for entry in results:          # merged in fixed submission order
            if entry["ok"]:
                collected.append(entry)
    if len(collected) < n_pairs:
        raise StageFailure(
            f"evaluate: only {len(collected)}/{n_pairs} queries planned within "
            f"{max_attempts} attempts")

    runs = []
    lmtd_traces, naive_traces = [], []
    goals_lmtd, goals_naive = [], []
    for i, entry in enumerate(collected):
        prob, traj = entry["prob"], entry["plan"]
        plan_path = _path(out, f"plan_{i:03d}.json")
        write_json(plan_path, plan_to_dict(traj, prob), cfg, traj.meta["seed"])
        trace_to_csv(entry["cl"], _path(out, f"trace_cl_plan_{i:03d}.csv"))
        trace_to_csv(entry["ol"], _path(out, f"trace_ol_plan_{i:03d}.csv"))
        trace_to_csv(entry["hold"], _path(out, f"trace_hold_plan_{i:03d}.csv"))
        lmtd_traces.append((entry["cl"], entry["ol"]))
        goals_lmtd.append(prob.x_g)
        run = {
            "index": i,
            "start": prob.x_i.tolist(),
            "goal": prob.x_g.tolist(),
            "lambda": lam,
            "plan_len": len(traj),
            "audit_issues": entry["audit_issues"],
            "max_track_err_cl": entry["cl"].max_track_err,
            "max_track_err_ol": entry["ol"].max_track_err,
            "goal_err_cl": entry["cl"].goal_err(prob.x_g),
            "goal_err_ol": entry["ol"].goal_err(prob.x_g),
            "cl_clamped_steps": entry["cl"].clamped_steps,
            "cl_solve_failed_at": entry["cl"].solve_failed_at,
            "cl_collided_at": entry["cl"].collided_at,
            "hold_max_dist_to_goal": float(np.max(np.linalg.norm(
                entry["hold"].executed_states - prob.x_g[None, :], axis=1))),
            "hold_solve_failed_at": entry["hold"].solve_failed_at,
        }
        if entry.get("naive"):
            nv = entry["naive"]
            write_json(_path(out, f"naive_plan_{i:03d}.json"),
                       plan_to_dict(nv["plan"], prob), cfg, nv["plan"].meta["seed"])
            trace_to_csv(nv["cl"], _path(out, f"trace_cl_naive_plan_{i:03d}.csv"))
            trace_to_csv(nv["ol"], _path(out, f"trace_ol_naive_plan_{i:03d}.csv"))
            naive_traces.append((nv["cl"], nv["ol"]))
            goals_naive.append(prob.x_g)
            run["naive_max_track_err_cl"] = nv["cl"].max_track_err
            run["naive_goal_err_cl"] = nv["cl"].goal_err(prob.x_g)
            run["naive_max_track_err_ol"] = nv["cl"].max_track_err
        elif ev.get("include_naive", True):
            run["naive_timeout"] = True
        runs.append(run)

    columns = {"trusted": aggregate_stats(lmtd_traces, goals_lmtd)}
    if naive_traces:
        columns["naive"] = aggregate_stats(naive_traces, goals_naive)
    stats_table_csv(columns, _path(out, "stats.csv"))
    table = stats_table_text(columns)
    with open(_path(out, "stats.txt"), "w") as fh:
        fh.write(table)
    summary = {
        "system": cfg["system"],
        "epsilon": td.epsilon,
        "r": td.r,
        "margin": td.margin,
        "e_t": td.e_t,
        "lambda": lam,
        "rho": td.rho,
        "rho_cubed": td.rho_cubed,
        "n_pairs": n_pairs,
        "runs": runs,
        "wall_time": time.perf_counter() - t_start,
    }
    write_json(_path(out, "evaluate_summary.json"), summary, cfg, cfg["seed"])
    return summary


# ---------------------------------------------------------------------------
# Plotting stage
# ---------------------------------------------------------------------------


def _load_trace_states(path, dim_x):
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        cols = [header.index(f"executed_x{i}") for i in range(dim_x)]
        return np.array([[float(row[c]) for c in cols] for row in reader])


def stage_plot(cfg, out):
    """Render one SVG per stored plan (nominal, closed loop, open loop)."""
    save_resolved_config(cfg, out)
    spec, _ = get_system(cfg["system"])
    train_path = _path(out, "train.csv")
    domain_pts = None
    domain_r = None
    if os.path.exists(_path(out, "domain.json")) and os.path.exists(train_path) \
            and spec.dim_x == 2:
        train = load_dataset_csv(train_path)
        td = load_domain(_path(out, "domain.json"), train)
        domain_pts = td.index_x.points
        domain_r = td.r
    made = []
    plan_files = sorted(
        f for f in os.listdir(out)
        if f.endswith(".json") and (f.startswith("plan_") or f.startswith("naive_plan_"))
    )
    for fname in plan_files:
        traj, prob = load_plan(_path(out, fname))
        base = os.path.splitext(fname)[0]
        curves = [("nominal", traj.states)]
        for tag, label in (("cl", "closed"), ("ol", "open")):
            tpath = _path(out, f"trace_{tag}_{base}.csv")
            if os.path.exists(tpath):
                curves.append((label, _load_trace_states(tpath, spec.dim_x)))
        svg = _path(out, f"{base}.svg")
        plot_plan_svg(
            svg,
            state_box=spec.state_box,
            position_dims=spec.position_dims or tuple(range(spec.dim_x)),
            curves=curves,
            obstacles=prob.obstacles,
            domain_points=domain_pts,
            domain_radius=domain_r,
            start=prob.x_i,
            goal=prob.x_g,
        )
        made.append(svg)
    return made

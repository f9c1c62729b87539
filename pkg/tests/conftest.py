import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from trustplan.pipeline import load_config, stage_evaluate

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(REPO_ROOT, "configs")


def _run_pipeline(tmp_path_factory, config_name, overrides=None):
    out = str(tmp_path_factory.mktemp(config_name.replace(".json", "")))
    path = os.path.join(CONFIG_DIR, config_name)
    cfg = load_config(path)
    if overrides:
        for key, val in overrides.items():
            if isinstance(val, dict):
                cfg[key] = {**cfg[key], **val}
            else:
                cfg[key] = val
    summary = stage_evaluate(cfg, out)
    return {"cfg": cfg, "out": out, "summary": summary}


@pytest.fixture(scope="session")
def sinusoid_run(tmp_path_factory):
    """Full sinusoid pipeline (gen-data, train, select-domain, 10 queries,
    closed/open-loop rollouts, goal holds, naive baseline). Built once."""
    return _run_pipeline(tmp_path_factory, "sinusoid2d.json")


@pytest.fixture(scope="session")
def quadrotor_run(tmp_path_factory):
    """Full quadrotor pipeline with the 3-box obstacle scene and 20 queries."""
    return _run_pipeline(tmp_path_factory, "quadrotor6d.json",
                         overrides={"evaluate": {"n_pairs": 20}})

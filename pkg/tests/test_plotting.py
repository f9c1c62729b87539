import hashlib

import numpy as np

from trustplan.planner import AxisBox
from trustplan.plotting import plot_plan_svg

BOX = np.array([[-1.0, 1.0], [-1.0, 1.0]])


def test_empty_curve_list_yields_valid_svg(tmp_path):
    path = tmp_path / "empty.svg"
    plot_plan_svg(path, BOX, (0, 1), curves=[])
    text = path.read_text()
    assert text.startswith("<svg")
    assert text.rstrip().endswith("</svg>")
    assert "<rect" in text     # the axes frame


def test_polyline_vertex_count_matches_states(tmp_path):
    states = np.array([[0.0, 0.0], [0.1, 0.0], [0.2, 0.1], [0.3, 0.1]])
    path = tmp_path / "plan.svg"
    plot_plan_svg(path, BOX, (0, 1), curves=[("nominal", states)])
    text = path.read_text()
    line = next(l for l in text.splitlines() if "polyline" in l)
    points = line.split('points="')[1].split('"')[0].split()
    assert len(points) == len(states)


def test_byte_determinism(tmp_path):
    rng = np.random.default_rng(0)
    states = rng.uniform(-1, 1, (20, 2))
    cl = states + rng.normal(size=(20, 2)) * 0.01
    obstacles = [AxisBox.make([0.2, 0.2], [0.5, 0.6])]
    domain_pts = rng.uniform(-1, 1, (30, 2))
    digests = []
    for name in ("a.svg", "b.svg"):
        p = tmp_path / name
        plot_plan_svg(p, BOX, (0, 1), curves=[("nominal", states), ("closed", cl)],
                      obstacles=obstacles, domain_points=domain_pts,
                      domain_radius=0.15, start=states[0], goal=states[-1])
        digests.append(hashlib.sha256(p.read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_three_panels_for_3d_positions(tmp_path):
    box6 = np.array([[-1.0, 1.0]] * 3 + [[-0.2, 0.2]] * 3)
    states = np.zeros((5, 6))
    states[:, 0] = np.linspace(0, 0.5, 5)
    path = tmp_path / "quad.svg"
    plot_plan_svg(path, box6, (0, 1, 2), curves=[("nominal", states)])
    text = path.read_text()
    assert text.count("x0x1") == 1
    assert text.count("x0x2") == 1
    assert text.count("x1x2") == 1

import json

import numpy as np
import pytest

import rit


def brute_knn(q, s, k):
    d = ((q[:, None, :] - s[None, :, :]) ** 2).sum(-1)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def test_knn_matches_numpy():
    rng = np.random.default_rng(0)
    s = rng.uniform(-10, 10, (80, 3))
    q = rng.uniform(-10, 10, (20, 3))
    assert np.array_equal(rit.knn(q, s, 5), brute_knn(q, s, 5))


def test_radius_and_fps():
    pts = np.array([[0.0, 0, 0], [5, 0, 0], [10, 0, 0]])
    assert rit.radius_neighbors(pts, 5.0) == [(0, 1), (1, 2)]
    assert rit.fps(pts, 3) == [0, 2, 1]


def test_idw_at_coarse_points_returns_their_features():
    cp = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    cf = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(rit.idw_interpolate(cp, cf, cp), cf)


def two_triangles():
    a = np.zeros((6, 6))
    for i, j in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]:
        a[i, j] = a[j, i] = 1.0
    return a


def test_partition_two_triangles():
    a = two_triangles()
    p = rit.partition_graph(a)
    assert p == [0, 0, 0, 1, 1, 1]
    assert rit.modularity(a, p) == pytest.approx(0.5, abs=1e-12)
    best, q = rit.brute_force_partition(a)
    assert q == pytest.approx(0.5, abs=1e-12)


def test_assign_instances_splits_distant_pairs():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [100, 0, 0], [101, 0, 0]])
    s = np.full((4, 4), 0.9)
    assert rit.assign_instances(pts, s, 7.0) == [0, 0, 1, 1]


def test_panoptic_two_of_three():
    r = rit.panoptic_eval([4, 4, -1, -1, -1], [0, 0, 0, -1, -1])
    assert r["moving"]["PQ"] == pytest.approx(200.0 / 3.0)


def test_errors_become_python_exceptions():
    with pytest.raises(ValueError):
        rit.fps(np.zeros((2, 3)), 5)
    with pytest.raises(ValueError):
        rit.knn(np.zeros((2, 2)), np.zeros((2, 3)), 1)


def test_config_and_cli(tmp_path):
    assert rit.config()["T"] == 2
    assert rit.config("miniature")["backbone"]["widths"] == [16, 32, 64, 128]
    code, out, _ = rit.run(["config", "--seed", "5"])
    assert code == 0 and json.loads(out)["seed"] == 5
    graph = tmp_path / "g.json"
    graph.write_text(json.dumps({"n": 6, "edges": [[0, 1, 1], [1, 2, 1], [0, 2, 1], [3, 4, 1], [4, 5, 1], [3, 5, 1]]}))
    code, out, err = rit.run(["partition", "--graph", str(graph)])
    assert code == 0
    assert "modularity 0.5" in err
    assert rit.run(["frobnicate"])[0] == 2

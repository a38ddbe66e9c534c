"""Smoke test for the pwot extension.

Build and install it first:
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/pwot-*.whl
then run `python python/smoke_test.py`.
"""

import math
import random

import pwot


def rotated(points, angle, reflect=False):
    c, s = math.cos(angle), math.sin(angle)
    out = [[c * x - s * y, s * x + c * y] for x, y in points]
    if reflect:
        out = [[x, -y] for x, y in out]
    return out


def ellipse(n, a, b, rng):
    pts = []
    for i in range(n):
        t = 2 * math.pi * (i + rng.random()) / n
        pts.append([a * math.cos(t), b * math.sin(t)])
    return pts


def main():
    rng = random.Random(0)
    a = [[rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)] for _ in range(40)]
    b = rotated(a, 1.1, reflect=True)
    rng.shuffle(b)

    fit = pwot.distance(a, b, init="upca")
    assert fit.converged
    assert fit.distance < 1e-6, fit.distance
    det = fit.map[0][0] * fit.map[1][1] - fit.map[0][1] * fit.map[1][0]
    assert abs(abs(det) - 1) < 1e-9

    bary = pwot.barycenter([a, b], size=20, init="upca")
    assert len(bary.support) == 20 and abs(sum(bary.weights) - 1) < 1e-9
    assert all(x >= y - 1e-9 for x, y in zip(bary.objective_trace, bary.objective_trace[1:]))

    path = pwot.interpolate(a, b, [0.0, 0.5, 1.0], size=20, init="upca")
    assert len(path) == 3

    rounds = [ellipse(30, 1.0, 0.95, rng) for _ in range(4)]
    thin = [rotated(ellipse(30, 1.0, 0.3, rng), rng.uniform(0, 6.3)) for _ in range(4)]
    result = pwot.cluster(rounds + thin, k=2, centroid_size=20)
    truth = [0] * 4 + [1] * 4
    assert pwot.adjusted_rand_index(truth, result.labels) == 1.0, result.labels
    assert pwot.normalized_mutual_info(truth, truth) == 1.0

    try:
        pwot.distance(a, [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    except ValueError as err:
        assert "dimension" in str(err)
    else:
        raise AssertionError("dimension mismatch was accepted")

    print("pwot smoke test passed")


if __name__ == "__main__":
    main()

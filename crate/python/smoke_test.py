"""Smoke test for the fedssp extension module.

Build and install first:  (cd crates/py && maturin develop --release)
Then run:                 python python/smoke_test.py
"""

import math

import fedssp


def close(a, b, tol=1e-8):
    return all(abs(x - y) <= tol for x, y in zip(a, b)) and len(a) == len(b)


def main():
    path = fedssp.Graph(3, [(0, 1), (1, 2)])
    values, vectors = path.spectrum()
    assert close(values, [0.0, 1.0, 2.0]), values
    assert len(vectors) == 3 and all(len(r) == 3 for r in vectors)

    n = 6
    cycle = fedssp.Graph(n, [(i, (i + 1) % n) for i in range(n)])
    want = sorted(1 - math.cos(2 * math.pi * k / n) for k in range(n))
    assert close(cycle.spectrum()[0], want)
    assert cycle.num_components() == 1

    assert fedssp.js_divergence([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert fedssp.js_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    cycles = fedssp.Dataset.synthetic(["cycles", "grids"], 20, 6, 12, seed=1, name="cycles")
    stars = fedssp.Dataset.synthetic(["stars", "grids"], 20, 6, 12, seed=2, name="stars")
    m = fedssp.divergence_matrix([cycles, stars])
    assert m[0][0] == 0.0 and m[0][1] > 0.1, m

    try:
        fedssp.Dataset.synthetic(["hexagons", "cycles"], 5, 4, 8, seed=0)
    except ValueError as e:
        assert "hexagons" in str(e)
    else:
        raise AssertionError("unknown family accepted")

    clients = [
        fedssp.Dataset.synthetic(["cycles", "stars"], 10, 5, 9, seed=3),
        fedssp.Dataset.synthetic(["grids", "random_er"], 10, 5, 9, seed=4),
    ]
    result = fedssp.run_experiment(clients, method="fedssp", rounds=3, hidden=8, heads=2, batch_size=8)
    assert 0.0 <= result["mean"] <= 1.0
    assert len(result["runs"]) == 1 and len(result["runs"][0]["clients"]) == 2
    again = fedssp.run_experiment(clients, method="fedssp", rounds=3, hidden=8, heads=2, batch_size=8)
    assert again == result, "runs are not reproducible"

    print(f"smoke test ok: {cycles!r}, fedssp 3-round accuracy {result['mean']:.3f}")


if __name__ == "__main__":
    main()

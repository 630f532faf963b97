"""Smoke test for the `ncal` extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke_test.py`.
"""

import json
import math
import os
import tempfile

import ncal


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * (1.0 + abs(b))


def main():
    # Two classes along the axes; a candidate on the diagonal.
    pool = ncal.Pool([0, 1, 2], [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], 2, {0: 0, 1: 1})
    assert pool.unlabeled() == [2]
    assert close(pool.cma(), 0.0)
    fast = pool.cmap(0, [1.0, 1.0])
    assert close(fast, pool.cmap_bruteforce(0, [1.0, 1.0])), fast
    # class 0 mean moves from (1, 0) to (1, 0.5)
    assert close(fast, 1 / math.sqrt(5)), fast

    assert ncal.flip_count([0, 1, 1, 2, 0]) == 3
    assert ncal.zscore([4.0, 4.0, 4.0]) == [0.0, 0.0, 0.0]
    z = ncal.zscore([1.0, 2.0, 3.0])
    assert close(sum(z), 0.0) and close(sum(v * v for v in z) / 3, 1.0)
    assert sum(ncal.longtail_counts(1300, 100, 0.05)) == 26476

    ids, rows, labels = ncal.generate_blobs([40, 40, 40], 4, separation=4.0, seed=1)
    labeled = {i: y for i, y in zip(ids, labels) if i % 4 == 0}
    pool = ncal.Pool(ids, rows, 3, labeled)
    unl = pool.unlabeled()
    preds = {i: [labels[i], (labels[i] + i) % 3, labels[i]] for i in ids}
    table = pool.score([7, 8, 9], preds, k=5)
    assert [c["id"] for c in table] == unl
    assert sum(c["selected"] for c in table) == 5
    for c in table:
        assert close(c["score"], (c["cmap_std"] + c["ff_std"]) / 2)
        assert close(c["cmap_raw"], pool.cmap_bruteforce(c["predicted_class"], pool.row(c["id"])), 1e-6)

    big = pool.scaled(100.0).score([7, 8, 9], preds, k=5)
    assert [c["rank"] for c in big] == [c["rank"] for c in table]

    report = pool.collapse_report()
    assert report["nc4_agreement"] > 0.9
    assert close(report["nc2_target"], -0.5)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "pool.ncf")
        pool.save(path)
        back = ncal.Pool.load(path)
        assert back.labeled() == pool.labeled()
        assert back.n_samples == pool.n_samples and back.dim == 4

    try:
        pool.label(unl[0], 7)
    except ncal.NcalError:
        pass
    else:
        raise AssertionError("out-of-range class accepted")

    cfg = json.loads(ncal.default_config())
    cfg.update(initial_fraction=0.1, acquisition_fraction=0.1, budget_fraction=0.3, seeds=[0])
    cfg["dataset"].update(num_classes=3, per_class=60, dim=4)
    cfg["training"].update(hidden=8, epochs=15)
    out = ncal.simulate(json.dumps(cfg), ["ncal", "random"])
    assert [s["strategy"] for s in out["summary"]] == ["ncal", "random"]
    assert all(len(r["records"]) == 3 for r in out["runs"])
    assert out == ncal.simulate(json.dumps(cfg), ["ncal", "random"])

    print("ncal smoke test: ok")


if __name__ == "__main__":
    main()

"""Smoke test for the hypernet_py extension.

Build and install the module first, e.g.

    pip install maturin
    maturin develop -m crates/py/Cargo.toml --release

then run `python python/smoke_test.py`.
"""

import json
import math
import os
import tempfile

import hypernet_py as hn


def main():
    model = hn.Model(window=9, bands=15, classes=16)
    assert model.param_count == 127_104, model.param_count
    summary = model.layer_summary()
    assert summary[0][1] == [7, 7, 9, 8], summary[0]
    assert summary[-1][2] == 2064, summary[-1]

    assert hn.split_counts(391) == (98, 97, 196)

    report = hn.metrics([1] * 50 + [2] * 50, [1] * 40 + [2] * 10 + [1] * 5 + [2] * 45, 2)
    assert abs(report["oa"] - 0.85) < 1e-12
    assert abs(report["kappa"] - 0.7) < 1e-12

    cube, manifest = hn.synth(classes=3, height=24, width=24, bands=40, seed=3)
    assert cube.shape == (24, 24, 40)
    assert cube.class_histogram() == manifest["class_counts"]

    pca = hn.Basis.fit(cube, method="pca", bands=15)
    svd = hn.Basis.fit(cube, method="svd", bands=15, center=True)
    assert pca.angle(svd) < 1e-8
    rows = pca.projection
    gram = [[sum(a * b for a, b in zip(r, s)) for s in rows] for r in rows]
    assert all(abs(gram[i][j] - (i == j)) < 1e-10 for i in range(15) for j in range(15))
    reduced = pca.transform([list(map(float, cube.spectrum(0, 0)))])
    assert len(reduced) == 1 and len(reduced[0]) == 15

    try:
        hn.Model(window=7)
    except ValueError as err:
        assert "architecture" in str(err), err
    else:
        raise AssertionError("window 7 accepted")

    with tempfile.TemporaryDirectory() as tmp:
        base = os.path.join(tmp, "scene")
        cube.save(base)
        assert hn.Cube.load(base).labels() == cube.labels()

        run = os.path.join(tmp, "run")
        trained = hn.train(base, run, epochs=2, batch=32)
        for name in ("model.ckpt", "trace.csv", "report.json", "map.ppm", "manifest.json", "basis.bin"):
            assert os.path.isfile(os.path.join(run, name)), name
        with open(os.path.join(run, "report.json")) as f:
            assert json.load(f) == trained
        again = hn.evaluate(os.path.join(run, "model.ckpt"))
        assert again == trained
        assert 0.0 <= trained["oa"] <= 1.0 and not math.isnan(trained["kappa"])

    print(f"hypernet_py {hn.__version__}: smoke test passed (test oa {trained['oa']:.3f})")


if __name__ == "__main__":
    main()

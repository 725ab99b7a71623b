"""Quick end-to-end check of the extension module."""

import json
import math
import tempfile
import os

import milb


def main():
    m = milb.GaussianMixture([0.5, 0.5], [[-2.0], [2.0]], [[1.0], [1.0]])
    lo, hi = m.entropy_lower(), m.entropy_upper()
    est, se = m.entropy_mc(20000, seed=1)
    assert lo - 3 * se <= est <= hi + 3 * se, (lo, est, hi)
    assert math.isfinite(m.log_pdf([0.0]))
    assert len(m.sample(5, seed=2)) == 5

    a = milb.GaussianMixture([1.0], [[-1.0]], [[0.5]])
    b = milb.GaussianMixture([1.0], [[1.0]], [[0.5]])
    score = milb.milb([a, b])
    mi, mi_se = milb.mutual_information_mc([a, b], 20000, seed=3)
    assert score <= mi + 3 * mi_se
    assert milb.epistemic_variance([a, a]) < 1e-12

    picks = milb.select([0.1, 0.9, 0.5, 0.7], 2)
    assert picks == [1, 3], picks
    picks = milb.select([0.1, 0.9, 0.5, 0.7], 2, strategy="maxdist", weight=0.0,
                        features=[[0.0], [1.0], [2.0], [3.0]])
    assert len(set(picks)) == 2

    bench = milb.Benchmark("multimodal")
    x = bench.sample_inputs(64, seed=4)
    y = bench.label(x, seed=5)
    assert len(y) == 64 and len(y[0]) == bench.output_dim
    assert bench.oracle(x[0]) is not None

    ens = milb.MdnEnsemble.fit(x, y, hidden=16, depth=1, components=2, n_ens=2, seed=6,
                               train=json.dumps({"min_iter": 50, "iter_cap": 50}))
    assert len(ens) == 2
    assert math.isfinite(ens.nll(x, y))
    scores = ens.scores(x, "milb")
    assert len(scores) == 64 and all(math.isfinite(s) for s in scores)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ens.json")
        ens.save(path)
        again = milb.MdnEnsemble.load(path)
        assert again.nll(x, y) == ens.nll(x, y)

    cfg = json.loads(milb.default_config("ternary"))
    cfg.update(pool_size=200, test_size=100, init_size=10, rounds=1, batch_size=5)
    cfg["model"].update(hidden=8, depth=1, components=2, n_ens=2)
    cfg["train"].update(min_iter=20, iter_cap=20)
    rec = json.loads(milb.run_experiment(json.dumps(cfg), 0))
    assert [r["n_labeled"] for r in rec["rounds"]] == [10, 15]
    assert rec["config_hash"] == milb.config_hash(json.dumps(cfg))
    print("smoke test ok")


if __name__ == "__main__":
    main()

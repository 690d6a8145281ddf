"""Smoke test for the afrnet_py extension.

Build and place the module next to this script first:

    cargo build --release -p afrnet-py --features extension-module
    cp target/release/libafrnet_py.so python/afrnet_py.so
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import afrnet_py as af


def small_config():
    cfg = af.RunConfig.from_json(json.dumps({
        "benchmark": {"seen_classes": 6, "unseen_classes": 3, "samples_per_class": 20,
                      "visual_dim": 8, "semantic_dim": 5},
        "gan": {"hidden": 12, "batch_size": 16},
        "softmax": {"iterations": 150},
    }))
    cfg.iterations = 20
    cfg.per_class = 30
    return cfg


def main():
    assert abs(af.harmonic_mean(48.4, 75.1) - 58.9) <= 0.05
    assert af.per_class_top1([0] * 100, [0] * 10 + [1] * 90, [0, 1]) == 50.0
    assert af.select_features([0.3, 0.1, 0.1, 0.9]) == [1, 2]
    assert af.select_features([0.3, 0.1, 0.1, 0.9], k=3) == [1, 2, 0]

    cfg = small_config()
    assert cfg.mode == "residual" and cfg.selection
    data = af.Dataset.synthetic(cfg)
    print(data)
    assert data.visual_dim == 8 and len(data.unseen) == 3
    assert data.noise_dims == sorted(data.noise_dims) and len(data.noise_dims) == 4

    afrnet, nn1 = af.run_pipeline(data, cfg)
    print(afrnet, nn1)
    assert 0.0 <= afrnet.u_acc <= 100.0 and afrnet.h_mean is None
    assert json.loads(afrnet.json)["config"]["seed"] == cfg.seed
    again, _ = af.run_pipeline(data, cfg)
    assert again.u_acc == afrnet.u_acc and again.json == afrnet.json

    cfg.gzsl = True
    afrnet, _ = af.run_pipeline(data, cfg)
    assert afrnet.s_acc is not None and afrnet.h_mean is not None

    rows = af.ablate(data, cfg)
    assert [(r["mode"], r["selection"]) for r in rows] == [
        ("baseline", False), ("baseline", True), ("residual", False), ("residual", True)]

    with tempfile.TemporaryDirectory() as tmp:
        data.save(os.path.join(tmp, "data"))
        loaded = af.Dataset.load(os.path.join(tmp, "data"))
        assert loaded.labels == data.labels and loaded.features() == data.features()
        assert loaded.noise_dims is None
        try:
            af.Dataset.load(os.path.join(tmp, "missing"))
        except af.AfrnetError as e:
            assert "missing" in str(e)
        else:
            raise AssertionError("loading a missing directory must fail")
        assert af.cli_run(["report", "--out", tmp]) == 1

    try:
        cfg.mode = "sideways"
    except af.AfrnetError:
        pass
    else:
        raise AssertionError("bad mode must be rejected")
    print("smoke test passed")


if __name__ == "__main__":
    main()

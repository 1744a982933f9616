#!/usr/bin/env python3
"""Smoke test for the redlab_py extension module.

Builds nothing itself: run `cargo build --release -p redlab-py` first, then
`python3 python/smoke_test.py`. The script locates the compiled cdylib in
target/, imports it, and exercises the main surface: synthetic data, victim
training, white-box and black-box attacks, and pipeline construction.
"""

import importlib.util
import json
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libredlab_py.so", "redlab_py.so", "libredlab_py.dylib")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("cdylib not found; run `cargo build --release -p redlab-py` first")
    stage = pathlib.Path(tempfile.mkdtemp()) / "redlab_py.so"
    shutil.copyfile(built, stage)
    spec = importlib.util.spec_from_file_location("redlab_py", stage)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    rl = load_module()

    methods = rl.attack_methods()
    assert len(methods) == 10, methods
    assert "pgd-linf" in methods and "zo-signsgd" in methods

    data = rl.Dataset.synthetic(
        classes=4, image_size=8, samples_per_class=12, noise_sigma=0.1
    )
    assert len(data) == 48
    assert data.shape == [3, 8, 8]
    assert data.classes == 4
    img = data.image(0)
    assert len(img) == 3 * 64 and all(0.0 <= v <= 1.0 for v in img)
    sub = data.subset(list(range(8)))
    assert len(sub) == 8

    victim = rl.Victim.train(
        data, "resnet9", kernel_size=3, activation="relu",
        sparsity=0.0, epochs=10, width=0.0625, lr=0.02, batch_size=16, seed=0,
    )
    attrs = victim.attributes
    assert attrs["family"] == "resnet9" and attrs["kernel_size"] == 3
    # Chance is 0.25 on 4 classes; ten epochs fit this toy set well.
    assert victim.clean_accuracy > 0.80, victim.clean_accuracy
    logits = victim.logits(data.image(0), data.shape)
    assert len(logits) == 4 and all(math.isfinite(v) for v in logits)
    assert victim.predict(data.image(0), data.shape) == logits.index(max(logits))

    eps = 16 / 255
    for method in ("fgsm", "pgd-linf", "square-linf"):
        out = rl.attack(victim, data, 0, method, eps, seed=1)
        assert out["linf"] <= eps + 1e-5, (method, out["linf"])
        assert all(-1e-5 <= v <= 1 + 1e-5 for v in out["x_adv"]), method
        recon = [c + d for c, d in zip(data.image(0), out["delta"])]
        assert max(abs(a - b) for a, b in zip(recon, out["x_adv"])) <= 1e-5
    bb = rl.attack(victim, data, 0, "nes", eps, seed=1, steps=2)
    assert bb["queries"] > 0, bb

    # Pipeline construction echoes the config; stages run like the CLI.
    cfg = ROOT / "python" / "smoke_config.toml"
    out_dir = pathlib.Path(tempfile.mkdtemp())
    rl.Pipeline(str(cfg), str(out_dir), seed=11)
    echoed = json.loads((out_dir / "config.json").read_text())
    assert echoed["seed"] == 11

    print("smoke test passed")


if __name__ == "__main__":
    main()

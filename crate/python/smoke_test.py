#!/usr/bin/env python3
"""Smoke test for the bda_py extension module.

Builds the cdylib with cargo if needed, imports it, and exercises the
main surface: synthetic scenes, two-stage training, prediction,
evaluation, fine-tuning, checkpoint round-trip, and the metric helpers.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_module() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "bda-py"],
        cwd=REPO,
        check=True,
    )
    lib = REPO / "target" / "release" / "libbda_py.so"
    if not lib.exists():  # macOS fallback
        lib = REPO / "target" / "release" / "libbda_py.dylib"
    stage = Path(tempfile.mkdtemp(prefix="bda_py_"))
    shutil.copy(lib, stage / "bda_py.so")
    return stage


def main() -> int:
    sys.path.insert(0, str(build_module()))
    import bda_py

    # Metric helpers against hand-checked values.
    assert abs(bda_py.macro_f1([0.9234, 0.6444, 0.7859, 0.8640]) - 0.7897) < 5e-4
    assert abs(bda_py.challenge_score(0.8624, 0.7897) - 0.8119) < 1e-3
    assert abs(bda_py.f1_from_pr(0.7983, 0.9377) - 0.8624) < 5e-4
    assert abs(bda_py.adaptation_gain(0.2122, 0.0142) - 0.1980) < 1e-12
    assert bda_py.dice_coefficient([1.0, 1.0], [1.0, 1.0]) > 1 - 1e-5
    assert abs(bda_py.focal_loss([0.5], [1.0], 0.0) - math.log(2.0)) < 1e-9

    # Scenes are deterministic for a fixed seed.
    s0 = bda_py.Scene.synthetic(1, side=32)
    s0b = bda_py.Scene.synthetic(1, side=32)
    assert s0.truth() == s0b.truth()
    assert s0.pre_pixels() == s0b.pre_pixels()
    assert s0.side == 32 and s0.gsd == 0.5

    train = [
        bda_py.Scene.synthetic(100 + i, side=32, event_id=f"ev-{i % 2}")
        for i in range(8)
    ]
    test = [bda_py.Scene.synthetic(900 + i, side=32) for i in range(2)]

    model = bda_py.Model.train(
        train, encoder_widths=[4, 8], epochs_stage1=1, epochs_stage2=1, seed=3
    )
    assert model.param_count > 0

    pred = model.predict(test[0])
    assert len(pred) == 32 and len(pred[0]) == 32
    assert all(v in (0, 1, 2, 3, 4) for row in pred for v in row)

    report = model.evaluate(test, scheme="fine")
    for key in ("f1_loc", "f1_binary", "f1_cls", "score", "per_grade"):
        assert key in report
    assert 0.0 <= report["f1_loc"] <= 1.0

    # Degraded input still evaluates; coarse scheme works too.
    degraded = [s.degraded(2.0) for s in test]
    model.evaluate(degraded, scheme="ahr")

    # Checkpoint round-trip preserves predictions exactly.
    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "model.json")
        model.save(path)
        loaded = bda_py.Model.load(path)
        assert loaded.predict(test[0]) == pred

    # Zero-share fine-tuning is the identity.
    same = model.fine_tuned(train, 0.0)
    assert same.predict(test[0]) == pred
    model.fine_tuned(train, 0.5, epochs=1)

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())

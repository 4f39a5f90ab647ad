"""Exercises the Python bindings end to end on tiny inputs.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/spcgan-*.whl
"""

import json
import math

import spcgan


def check_phantom():
    spec = json.dumps({"canvas": [32, 32], "lesion_radius_range": [4.0, 7.0]})
    p = spcgan.generate_phantom(3, spec)
    again = spcgan.generate_phantom(3, spec)
    assert p.image.to_list() == again.image.to_list()
    assert (p.image.width, p.image.height) == (32, 32)
    assert p.mask.area > 0
    assert p.lesion_class in ("benign", "malignant")
    return spec


def check_dice_and_stats():
    a = spcgan.Mask([[1, 1, 0], [0, 0, 0], [0, 0, 0]])
    b = spcgan.Mask([[1, 0, 0], [0, 0, 0], [0, 0, 0]])
    assert math.isclose(spcgan.dice(a, b), 2 / 3)
    assert a.dice(a) == 1.0
    t, p, df = spcgan.paired_ttest([0.9, 0.8, 0.85, 0.95], [0.7, 0.75, 0.8, 0.85])
    assert df == 3 and t > 0 and 0 < p < 0.05
    try:
        spcgan.paired_ttest([0.5, 0.6], [0.4, 0.5])
    except spcgan.SpcganError:
        pass
    else:
        raise AssertionError("zero variance accepted")
    assert spcgan.lr_at(0) == 2e-4 and spcgan.lr_at(1500) == 0.0


def check_levelset():
    n = 32
    rows = [[-0.7 if math.hypot(r - 16, c - 16) < 8 else 0.5 for c in range(n)] for r in range(n)]
    img = spcgan.Image(rows)
    g = spcgan.speed_map(img, 1.0)
    assert len(g) == n and all(0 < v <= 1 for row in g for v in row)
    params = spcgan.LevelSetParams(alpha=30.0, sigma=1.0, steps=40, init_radius=2.0)
    mask = spcgan.levelset_segment(img, params, (16.0, 16.0))
    truth = spcgan.Mask([[1.0 if v < 0 else 0.0 for v in row] for row in rows])
    assert mask.dice(truth) > 0.8, mask.dice(truth)


def check_training(spec):
    data = [spcgan.generate_phantom(s, spec) for s in range(3)]
    cfg = json.dumps({
        "regime": "fcn",
        "generator": {"backbone": "unet", "base_width": 8, "unet_depth": 3},
        "epochs": 2,
        "decay_start_epoch": 1,
    })
    ckpt = spcgan.train(data[:2], data[2:], cfg)
    assert ckpt.val_loss is not None
    m = ckpt.segment(data[0].image)
    assert (m.width, m.height) == (32, 32)


if __name__ == "__main__":
    spec = check_phantom()
    check_dice_and_stats()
    check_levelset()
    check_training(spec)
    print("smoke test passed")

# SPDX-License-Identifier: Apache-2.0
"""Builds the toy train/eval image folders from sample images that ship with
scikit-image, scikit-learn and matplotlib.

Eval images are 256x384 crops; training images are the parts of each source
that do not overlap any eval crop, so no pixel appears in both sets.

    python scripts/make_data.py data
"""
import argparse
import os

import matplotlib
import matplotlib.image as mpimg
import numpy as np
from PIL import Image
from skimage import data as skdata
from sklearn.datasets import load_sample_images

EVAL_H, EVAL_W = 256, 384
MIN_TRAIN = 128


def rgb(a):
    a = np.asarray(a)
    if a.dtype != np.uint8:
        a = (np.clip(a, 0, 1) * 255 + 0.5).astype(np.uint8)
    if a.ndim == 2:
        a = np.stack([a] * 3, axis=-1)
    return np.ascontiguousarray(a[..., :3])


def sources():
    sk = load_sample_images()
    mpl = os.path.join(matplotlib.get_data_path(), "sample_data")
    out = {
        "astronaut": skdata.astronaut(),
        "coffee": skdata.coffee(),
        "rocket": skdata.rocket(),
        "china": sk.images[0],
        "flower": sk.images[1],
        "grace_hopper": mpimg.imread(os.path.join(mpl, "grace_hopper.jpg")),
        "immuno": skdata.immunohistochemistry(),
        "hubble": skdata.hubble_deep_field(),
        "retina": skdata.retina(),
        "camera": skdata.camera(),
        "moon": skdata.moon(),
        "cell": skdata.cell(),
        "grass": skdata.grass(),
        "gravel": skdata.gravel(),
        # training only
        "brick": skdata.brick(),
        "chelsea": skdata.chelsea(),
        "coins": skdata.coins(),
        "clock": skdata.clock(),
        "colorwheel": skdata.colorwheel(),
        "page": skdata.page(),
        "text": skdata.text(),
    }
    return {k: rgb(v) for k, v in out.items()}


# (source, [eval tile origins]); training keeps the rows outside the band
# spanned by the tiles.
EVAL_TILES = {
    "astronaut": [(0, 0)],
    "coffee": [(0, 0)],
    "rocket": [(0, 0)],
    "china": [(0, 0)],
    "flower": [(0, 0)],
    "grace_hopper": [(0, 0)],
    "immuno": [(0, 0)],
    "hubble": [(0, 0), (0, 384)],
    "retina": [(300, 200), (300, 584), (300, 968),
               (556, 200), (556, 584), (556, 968)],
    "camera": [(0, 0)],
    "moon": [(0, 0)],
    "cell": [(0, 0)],
    "grass": [(0, 0)],
    "gravel": [(0, 0)],
}


def save(path, a):
    Image.fromarray(a).save(path)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    args = ap.parse_args()
    train_dir = os.path.join(args.out, "train")
    eval_dir = os.path.join(args.out, "eval")
    os.makedirs(train_dir, exist_ok=True)
    os.makedirs(eval_dir, exist_ok=True)

    n_eval = n_train = 0
    for name, img in sources().items():
        tiles = EVAL_TILES.get(name, [])
        for i, (y, x) in enumerate(tiles):
            tile = img[y:y + EVAL_H, x:x + EVAL_W]
            assert tile.shape[:2] == (EVAL_H, EVAL_W), (name, tile.shape)
            save(os.path.join(eval_dir, f"{name}_{i}.png"), tile)
            n_eval += 1
        if tiles:
            top = min(y for y, _ in tiles)
            bottom = max(y for y, _ in tiles) + EVAL_H
            parts = [img[:top], img[bottom:]]
        else:
            parts = [img]
        for j, p in enumerate(parts):
            if p.shape[0] >= MIN_TRAIN and p.shape[1] >= MIN_TRAIN:
                save(os.path.join(train_dir, f"{name}_{j}.png"), p)
                n_train += 1
    print(f"{n_train} training images, {n_eval} eval images")


if __name__ == "__main__":
    main()

from __future__ import annotations

import random
import shutil
from pathlib import Path

from adaptive_feeding.cli import main
from adaptive_feeding.core import BBox, Detection, GtObject, ImageRecord

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"
PINNED_MANIFEST = DATA / "pinned_manifest.json"
PIPELINE = ("simulate", "label", "featurize", "train", "route", "report")


def micro_instance(seed: int):
    """A small single-class problem on an integer grid with frequent score ties.

    Returns (images, detections as (image index, Detection)) with at most
    four ground-truth boxes and six detections in total.
    """
    rng = random.Random(seed)
    n_images = rng.randint(1, 2)
    n_gt = rng.randint(1, 4)
    gts: list[list[GtObject]] = [[] for _ in range(n_images)]
    for j in range(n_gt):
        x, y = rng.randint(0, 14), rng.randint(0, 14)
        w, h = rng.randint(2, 6), rng.randint(2, 6)
        gts[rng.randrange(n_images)].append(
            GtObject(0, BBox(x, y, x + w, y + h), difficult=j > 0 and rng.random() < 0.2)
        )
    if all(g.difficult for objs in gts for g in objs):
        first = next(objs for objs in gts if objs)
        first[0] = GtObject(0, first[0].bbox, False)

    dets = []
    for _ in range(rng.randint(0, 6)):
        img = rng.randrange(n_images)
        if gts[img] and rng.random() < 0.7:
            b = rng.choice(gts[img]).bbox
            dx, dy = rng.randint(-2, 2), rng.randint(-2, 2)
            box = BBox(b.xmin + dx, b.ymin + dy, b.xmax + dx + rng.randint(0, 1), b.ymax + dy)
        else:
            x, y = rng.randint(0, 14), rng.randint(0, 14)
            box = BBox(x, y, x + rng.randint(2, 6), y + rng.randint(2, 6))
        dets.append((img, Detection(0, rng.choice([0.2, 0.4, 0.5, 0.7, 0.9]), box)))

    images = [ImageRecord(f"m{i}", 40, 40, tuple(objs)) for i, objs in enumerate(gts)]
    return images, dets


def oracle_inputs(images, dets):
    gts = {i: [(g.bbox.as_tuple(), g.difficult) for g in im.objects] for i, im in enumerate(images)}
    flat = [(img, d.score, d.bbox.as_tuple()) for img, d in dets]
    return flat, gts


def pinned_workspace(dest: Path) -> Path:
    """Copy the pinned manifest into ``dest`` and return the copy's path."""
    dest.mkdir(parents=True, exist_ok=True)
    target = dest / "manifest.json"
    shutil.copyfile(PINNED_MANIFEST, target)
    return target


def run_pipeline(manifest: Path, commands=PIPELINE) -> None:
    for cmd in commands:
        code = main([cmd, "--manifest", str(manifest)])
        if code != 0:
            raise AssertionError(f"{cmd} exited with {code}")

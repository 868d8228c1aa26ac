#!/usr/bin/env python3
"""Generates tests/data/coco_reference.json.

Builds randomized micro-datasets (<= 5 images, <= 3 classes, <= 8 boxes per
image) plus two hand-made fixtures, scores each with pycocotools, and stores
datasets and metrics together so the C++ suite can compare against them
without Python.

    python3 scripts/gen_coco_reference.py [--cases 50] [--seed 20241018]
"""

import argparse
import contextlib
import io
import json
import pathlib

import numpy as np
from pycocotools.coco import COCO
from pycocotools.cocoeval import COCOeval

METRICS = ["ap_all", "ap50", "ap75", "ap_s", "ap_m", "ap_l",
           "recall_s", "recall_m", "recall_l", "recall_all"]
# Index into COCOeval.stats for each metric (AR values at maxDets=100).
STAT_INDEX = [0, 1, 2, 3, 4, 5, 9, 10, 11, 8]


def score_with_pycocotools(gt, dets):
    with contextlib.redirect_stdout(io.StringIO()):
        coco_gt = COCO()
        coco_gt.dataset = json.loads(json.dumps(gt))
        coco_gt.createIndex()
        coco_dt = coco_gt.loadRes(json.loads(json.dumps(dets)))
        ev = COCOeval(coco_gt, coco_dt, "bbox")
        ev.evaluate()
        ev.accumulate()
        ev.summarize()
    out = {}
    for name, idx in zip(METRICS, STAT_INDEX):
        v = float(ev.stats[idx])
        out[name] = None if v < 0 else v
    return out


def avoid_area_boundaries(w, h):
    # Keep areas away from 32^2 and 96^2, where the reference evaluator's
    # closed intervals differ from half-open ones.
    for edge in (32.0 ** 2, 96.0 ** 2):
        if abs(w * h - edge) < 1e-6:
            w += 0.37
    return w, h


def random_case(rng, index):
    n_images = int(rng.integers(1, 6))
    n_classes = int(rng.integers(1, 4))
    images = [{"id": i + 1, "file_name": f"img{i + 1}.jpg", "width": 400, "height": 400}
              for i in range(n_images)]
    categories = [{"id": c + 1, "name": f"class{c + 1}"} for c in range(n_classes)]
    annotations = []
    dets = []
    ann_id = 1
    for im in images:
        n_gt = int(rng.integers(0, 9))
        for _ in range(n_gt):
            # Log-uniform sizes so small, medium and large boxes all occur.
            w = float(np.exp(rng.uniform(np.log(6.0), np.log(220.0))))
            h = float(np.exp(rng.uniform(np.log(6.0), np.log(220.0))))
            w, h = avoid_area_boundaries(w, h)
            x = float(rng.uniform(0.0, 400.0 - w))
            y = float(rng.uniform(0.0, 400.0 - h))
            cat = int(rng.integers(1, n_classes + 1))
            annotations.append({"id": ann_id, "image_id": im["id"], "category_id": cat,
                                "bbox": [x, y, w, h], "area": w * h, "iscrowd": 0})
            ann_id += 1
            # Zero to two noisy detections per ground truth.
            for _ in range(int(rng.integers(0, 3))):
                s = rng.uniform(0.0, 0.35)
                dx, dy = rng.normal(0.0, s * w), rng.normal(0.0, s * h)
                dw = w * float(np.exp(rng.normal(0.0, s)))
                dh = h * float(np.exp(rng.normal(0.0, s)))
                dw, dh = avoid_area_boundaries(dw, dh)
                dcat = cat if rng.uniform() < 0.85 else int(rng.integers(1, n_classes + 1))
                dets.append({"image_id": im["id"], "category_id": dcat,
                             "bbox": [x + dx, y + dy, dw, dh]})
        # Background false positives.
        for _ in range(int(rng.integers(0, 3))):
            w = float(np.exp(rng.uniform(np.log(6.0), np.log(200.0))))
            h = float(np.exp(rng.uniform(np.log(6.0), np.log(200.0))))
            w, h = avoid_area_boundaries(w, h)
            dets.append({"image_id": im["id"], "category_id": int(rng.integers(1, n_classes + 1)),
                         "bbox": [float(rng.uniform(0, 400 - w)), float(rng.uniform(0, 400 - h)), w, h]})
    if not dets:
        im = images[0]
        dets.append({"image_id": im["id"], "category_id": 1, "bbox": [10.0, 10.0, 50.0, 40.0]})
    # Distinct scores so ranking never depends on tie-breaking.
    scores = rng.permutation(len(dets)) + 1
    for d, s in zip(dets, scores):
        d["score"] = float(s) / float(len(dets) + 1)
    gt = {"images": images, "annotations": annotations, "categories": categories}
    return {"name": f"random_{index:03d}", "gt": gt, "dets": dets}


def micro_case():
    images = [{"id": i, "file_name": f"img{i}.jpg", "width": 200, "height": 200} for i in (1, 2, 3)]
    categories = [{"id": 1, "name": "a"}, {"id": 2, "name": "b"}]

    def ann(i, img, cat, bbox):
        return {"id": i, "image_id": img, "category_id": cat, "bbox": bbox,
                "area": bbox[2] * bbox[3], "iscrowd": 0}

    annotations = [ann(1, 1, 1, [10, 10, 40, 40]), ann(2, 1, 2, [100, 100, 20, 20]),
                   ann(3, 2, 1, [0, 0, 100, 100]), ann(4, 3, 2, [50, 50, 30, 30])]
    dets = [
        {"image_id": 1, "category_id": 1, "bbox": [10, 10, 40, 40], "score": 0.9},
        {"image_id": 1, "category_id": 2, "bbox": [102, 100, 20, 20], "score": 0.8},
        {"image_id": 2, "category_id": 1, "bbox": [0, 0, 100, 50], "score": 0.7},
        {"image_id": 3, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.95},
    ]
    return {"name": "micro_3img_2cls",
            "gt": {"images": images, "annotations": annotations, "categories": categories},
            "dets": dets}


def perfect_case(rng):
    case = random_case(rng, 0)
    case["name"] = "perfect"
    anns = case["gt"]["annotations"]
    case["dets"] = [{"image_id": a["image_id"], "category_id": a["category_id"], "bbox": a["bbox"],
                     "score": 0.5 + 0.4 * (i + 1) / (len(anns) + 1)} for i, a in enumerate(anns)]
    return case


def covers_all_strata(case):
    areas = [a["area"] for a in case["gt"]["annotations"]]
    return (any(a < 32 ** 2 for a in areas) and any(32 ** 2 <= a < 96 ** 2 for a in areas)
            and any(a >= 96 ** 2 for a in areas))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cases", type=int, default=50)
    ap.add_argument("--seed", type=int, default=20241018)
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent
                                         / "tests" / "data" / "coco_reference.json"))
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    cases = [random_case(rng, i) for i in range(args.cases)]
    perfect = perfect_case(rng)
    while not covers_all_strata(perfect):
        perfect = perfect_case(rng)
    cases.append(perfect)
    cases.append(micro_case())
    for c in cases:
        c["expected"] = score_with_pycocotools(c["gt"], c["dets"])

    doc = {"generator": "scripts/gen_coco_reference.py", "seed": args.seed,
           "evaluator": "pycocotools COCOeval (bbox), stats[0..5, 9..11, 8]",
           "cases": cases}
    pathlib.Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {len(cases)} cases to {args.out}")


if __name__ == "__main__":
    main()

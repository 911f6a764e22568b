"""Regenerates voc_case.json: rotated VOC07/VOC12 AP computed with shapely
polygons and the DOTA devkit matching rules.

    python3 voc_case.py > voc_case.json
"""
import json
import math

import numpy as np
from shapely.geometry import Polygon


def corners(cx, cy, w, h, t):
    c, s = math.cos(t), math.sin(t)
    pts = []
    for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)):
        pts.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
    return Polygon(pts)


def iou(a, b):
    pa, pb = corners(*a), corners(*b)
    inter = pa.intersection(pb).area
    return inter / (pa.area + pb.area - inter)


def voc_ap(rec, prec, use_07):
    if use_07:
        ap = 0.0
        for t in np.arange(0.0, 1.1, 0.1):
            p = np.max(prec[rec >= t]) if np.sum(rec >= t) > 0 else 0.0
            ap += p / 11.0
        return ap
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    i = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def class_ap(images, dets, cls, thr, use_07):
    gts = {i: [g for g in img if g["class_id"] == cls] for i, img in enumerate(images)}
    npos = sum(1 for g in sum(gts.values(), []) if not g["difficult"])
    if npos == 0:
        return None
    mine = sorted(((d["score"], i, d) for i, ds in enumerate(dets) for d in ds if d["class_id"] == cls),
                  key=lambda x: -x[0])
    used = {i: [False] * len(g) for i, g in gts.items()}
    tp, fp = [], []
    for _, i, d in mine:
        best, j = -1.0, -1
        for k, g in enumerate(gts[i]):
            v = iou(d["obb"], g["obb"])
            if v > best:
                best, j = v, k
        if best >= thr:
            if gts[i][j]["difficult"]:
                continue
            if not used[i][j]:
                used[i][j] = True
                tp.append(1); fp.append(0)
            else:
                tp.append(0); fp.append(1)
        else:
            tp.append(0); fp.append(1)
    tp, fp = np.cumsum(tp), np.cumsum(fp)
    rec = tp / npos
    prec = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return voc_ap(rec, prec, use_07)


def obj(cx, cy, w, h, t, c, difficult=False):
    return {"obb": [cx, cy, w, h, t], "class_id": c, "difficult": difficult}


def det(cx, cy, w, h, t, c, score):
    return {"obb": [cx, cy, w, h, t], "class_id": c, "score": score}


images = [
    [obj(20, 20, 30, 10, 0.3, 0), obj(70, 40, 24, 12, -0.8, 1), obj(40, 90, 40, 8, 1.2, 0, True)],
    [obj(30, 30, 18, 16, 0.0, 1), obj(90, 80, 50, 9, -0.2, 0), obj(60, 60, 26, 10, 0.6, 0)],
]
dets = [
    [det(21, 20, 28, 10, 0.35, 0, 0.95), det(70, 41, 22, 12, -0.7, 1, 0.9),
     det(40, 90, 40, 8, 1.2, 0, 0.85), det(20, 21, 30, 11, 0.3, 0, 0.6),
     det(100, 100, 20, 8, 0.0, 0, 0.55), det(69, 40, 24, 12, -0.8, 1, 0.3)],
    [det(30, 31, 18, 15, 0.1, 1, 0.8), det(91, 80, 45, 9, -0.25, 0, 0.75),
     det(60, 62, 26, 10, 1.0, 0, 0.5), det(10, 10, 12, 6, 0.4, 1, 0.45),
     det(60, 60, 26, 10, 0.6, 0, 0.4)],
]

out = {"iou_thr": 0.5, "num_classes": 2, "images": images, "detections": dets, "expected": {}}
for metric, use_07 in (("voc07", True), ("voc12", False)):
    aps = [class_ap(images, dets, c, 0.5, use_07) for c in range(2)]
    valid = [a for a in aps if a is not None]
    out["expected"][metric] = {"classes": aps, "map": sum(valid) / len(valid)}
print(json.dumps(out, indent=1))

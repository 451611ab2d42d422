"""Independent scalar-loop reference implementations.

Everything here is deliberately written with plain Python loops and
``math`` so the vectorized library code is checked against an
implementation that shares none of its machinery. Inputs are nested lists
(or anything indexable like one); outputs are nested lists and floats.
"""

import math


def to_list(arr):
    try:
        return arr.tolist()
    except AttributeError:
        return arr


def naive_saliency(sem, token):
    """Softmax of scaled token dots over all positions, then min-max."""
    sem = to_list(sem)
    token = to_list(token)
    h, w, d = len(sem), len(sem[0]), len(sem[0][0])
    logits = []
    for y in range(h):
        row = []
        for x in range(w):
            acc = 0.0
            for c in range(d):
                acc += sem[y][x][c] * token[c]
            row.append(acc / math.sqrt(d))
        logits.append(row)
    peak = max(max(row) for row in logits)
    exps = [[math.exp(v - peak) for v in row] for row in logits]
    total = sum(sum(row) for row in exps)
    soft = [[v / total for v in row] for row in exps]
    lo = min(min(row) for row in soft)
    hi = max(max(row) for row in soft)
    if hi == lo:
        return [[1.0] * w for _ in range(h)]
    return [[(v - lo) / (hi - lo) for v in row] for row in soft]


def naive_reference_mask(sem, token, tau):
    sal = naive_saliency(sem, token)
    lo = min(min(row) for row in sal)
    hi = max(max(row) for row in sal)
    if hi == lo:
        return [[True] * len(sal[0]) for _ in sal]
    mask = [[v > tau for v in row] for row in sal]
    if not any(any(row) for row in mask):
        best, by, bx = None, 0, 0
        for y, row in enumerate(sal):
            for x, v in enumerate(row):
                if best is None or v > best:
                    best, by, bx = v, y, x
        mask = [[False] * len(sal[0]) for _ in sal]
        mask[by][bx] = True
    return mask


def naive_masked_vectors(app, mask):
    app = to_list(app)
    mask = to_list(mask)
    vectors, positions = [], []
    for y, row in enumerate(mask):
        for x, keep in enumerate(row):
            if keep:
                vectors.append(list(app[y][x]))
                positions.append((y, x))
    return vectors, positions


def _cosine(u, v):
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def naive_appearance_map(vectors, target_app, use_cosine=False):
    target_app = to_list(target_app)
    h, w = len(target_app), len(target_app[0])
    out = []
    for y in range(h):
        row = []
        for x in range(w):
            cell = target_app[y][x]
            acc = 0.0
            for vec in vectors:
                if use_cosine:
                    acc += _cosine(vec, cell)
                else:
                    acc += sum(a * b for a, b in zip(vec, cell))
            row.append(acc / len(vectors))
        out.append(row)
    return out


def naive_semantic_map(target_sem, token):
    target_sem = to_list(target_sem)
    token = to_list(token)
    out = []
    for row in target_sem:
        out.append([sum(a * b for a, b in zip(cell, token)) for cell in row])
    return out


def naive_normalize(values):
    values = to_list(values)
    lo = min(min(row) for row in values)
    hi = max(max(row) for row in values)
    if hi == lo:
        return [[1.0 for _ in row] for row in values]
    return [[(v - lo) / (hi - lo) for v in row] for row in values]


def naive_fuse(app, sem, mode):
    if mode == "appearance_only":
        return [list(row) for row in app]
    if mode == "semantic_only":
        return [list(row) for row in sem]
    return [[(a + s) / 2.0 for a, s in zip(ra, rs)] for ra, rs in zip(app, sem)]


def naive_match(ref_sem, ref_app, token, target_sem, target_app,
                tau=0.7, mode="both", use_cosine=False, external_mask=None):
    """Full pipeline: mask -> crop -> score -> normalize -> fuse -> mean."""
    if external_mask is not None:
        mask = to_list(external_mask)
    else:
        mask = naive_reference_mask(ref_sem, token, tau)
    app_map = sem_map = None
    if mode != "semantic_only":
        vectors, _ = naive_masked_vectors(ref_app, mask)
        app_map = naive_normalize(
            naive_appearance_map(vectors, target_app, use_cosine))
    if mode != "appearance_only":
        sem_map = naive_normalize(naive_semantic_map(target_sem, token))
    fused = naive_fuse(app_map, sem_map, mode)
    total = sum(sum(row) for row in fused)
    cells = len(fused) * len(fused[0])
    return {
        "mask": mask,
        "appearance": app_map,
        "semantic": sem_map,
        "fused": fused,
        "global_score": total / cells,
    }


def naive_bilinear(values, H, W):
    """Half-pixel-center bilinear resize of an h x w grid to H x W."""
    values = to_list(values)
    h, w = len(values), len(values[0])
    out = []
    for i in range(H):
        sy = min(max((i + 0.5) * h / H - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        row = []
        for j in range(W):
            sx = min(max((j + 0.5) * w / W - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = values[y0][x0] * (1 - fx) + values[y0][x1] * fx
            bot = values[y1][x0] * (1 - fx) + values[y1][x1] * fx
            row.append(top * (1 - fy) + bot * fy)
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# Mask-metric set oracles
# ---------------------------------------------------------------------------


def boundary_cells(mask):
    """(y, x) set: mask cells next to background or on the image edge."""
    mask = to_list(mask)
    h, w = len(mask), len(mask[0])
    cells = set()
    for y in range(h):
        for x in range(w):
            if not mask[y][x]:
                continue
            on_edge = y == 0 or x == 0 or y == h - 1 or x == w - 1
            neighbors = [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)]
            touches_bg = any(
                0 <= ny < h and 0 <= nx < w and not mask[ny][nx]
                for ny, nx in neighbors
            )
            if on_edge or touches_bg:
                cells.add((y, x))
    return cells


def dilate_cells(cells, radius, h, w):
    """All grid cells within Euclidean distance ``radius`` of the set."""
    out = set()
    for (cy, cx) in cells:
        for y in range(max(0, cy - radius), min(h, cy + radius + 1)):
            for x in range(max(0, cx - radius), min(w, cx + radius + 1)):
                if (y - cy) ** 2 + (x - cx) ** 2 <= radius ** 2:
                    out.add((y, x))
    return out


def tolerance_cells(h, w, fraction):
    return max(1, math.floor(fraction * math.hypot(h, w) + 0.5))


def naive_boundary_iou(pred, gt, fraction):
    pred, gt = to_list(pred), to_list(gt)
    h, w = len(pred), len(pred[0])
    if not any(any(r) for r in pred) and not any(any(r) for r in gt):
        return 1.0
    r = tolerance_cells(h, w, fraction)
    pd = dilate_cells(boundary_cells(pred), r, h, w)
    gd = dilate_cells(boundary_cells(gt), r, h, w)
    union = pd | gd
    if not union:
        return 1.0
    return len(pd & gd) / len(union)


def naive_contour_f(pred, gt, fraction):
    pred, gt = to_list(pred), to_list(gt)
    h, w = len(pred), len(pred[0])
    pb = boundary_cells(pred)
    gb = boundary_cells(gt)
    if not pb and not gb:
        return 1.0
    if not pb or not gb:
        return 0.0
    r = tolerance_cells(h, w, fraction)
    r2 = r * r

    def within(src, dst):
        hits = 0
        for (y, x) in src:
            if any((y - qy) ** 2 + (x - qx) ** 2 <= r2 for (qy, qx) in dst):
                hits += 1
        return hits / len(src)

    precision = within(pb, gb)
    recall = within(gb, pb)
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def naive_average_precision(ranked_ids, relevant):
    hits = 0
    total = 0.0
    for k, image_id in enumerate(ranked_ids, start=1):
        if image_id in relevant:
            hits += 1
            total += hits / k
    return total / len(relevant)

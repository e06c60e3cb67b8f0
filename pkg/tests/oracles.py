"""Independent reference implementations used to verify the package.

Everything here is deliberately written the slow, obvious way (nested loops,
central finite differences) so tests compare the package against code that
shares none of its vectorized shortcuts.
"""

import numpy as np

LOG_FLOOR = 1e-12


def fd_grad(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        hi = f(x)
        x[idx] = old - eps
        lo = f(x)
        x[idx] = old
        grad[idx] = (hi - lo) / (2.0 * eps)
    return grad


def rel_err(a, b):
    """Max elementwise error relative to the larger magnitude scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def brute_cams(features, theta):
    """Per-pixel dot products with explicit loops: (D,h,w) x (C,D) -> (C,h,w)."""
    d, h, w = features.shape
    c = theta.shape[0]
    out = np.zeros((c, h, w))
    for ci in range(c):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for di in range(d):
                    acc += theta[ci, di] * features[di, y, x]
                out[ci, y, x] = acc
    return out


def brute_soft_margin(logits, y):
    """Mean over all entries of -log(p_true) with the 1e-12 floor."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    total = 0.0
    for lo, yi in zip(logits, y):
        p = 1.0 / (1.0 + np.exp(-lo))
        p_true = p if yi == 1.0 else 1.0 - p
        total += -np.log(p_true + LOG_FLOOR)
    return total / logits.size


def brute_reconstruction(a_s, a_re, y):
    """Masked mean absolute difference via loops over every element."""
    c, h, w = a_s.shape
    total = 0.0
    for ci in range(c):
        for yy in range(h):
            for xx in range(w):
                if y[ci] == 1.0:
                    total += abs(a_s[ci, yy, xx] - a_re[ci, yy, xx])
    return total / (c * h * w)


def brute_pseudo_labels(maps, tau, band=None):
    """Per-pixel nested-loop decision rule."""
    c, h, w = maps.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for yy in range(h):
        for xx in range(w):
            best = -1.0
            arg = 0
            for ci in range(c):
                if maps[ci, yy, xx] > best:
                    best = maps[ci, yy, xx]
                    arg = ci
            if best < tau:
                out[yy, xx] = 0
            else:
                out[yy, xx] = arg + 1
            if band is not None and band[0] <= best <= band[1]:
                out[yy, xx] = 255
    return out


def brute_miou(pred_maps, gt_maps, num_classes):
    """Counting mIoU: per-class TP/FP/FN accumulated pixel by pixel."""
    k = num_classes + 1
    tp = np.zeros(k, dtype=np.int64)
    fp = np.zeros(k, dtype=np.int64)
    fn = np.zeros(k, dtype=np.int64)
    for pred, gt in zip(pred_maps, gt_maps):
        h, w = gt.shape
        for yy in range(h):
            for xx in range(w):
                g = int(gt[yy, xx])
                if g == 255:
                    continue
                p = int(pred[yy, xx])
                if p == g:
                    tp[g] += 1
                else:
                    fp[p] += 1
                    fn[g] += 1
    ious = np.full(k, np.nan)
    for ci in range(k):
        union = tp[ci] + fp[ci] + fn[ci]
        if union > 0:
            ious[ci] = tp[ci] / union
    defined = ~np.isnan(ious)
    return ious, float(ious[defined].mean())


def brute_variant_average(model, image, scales, use_hflip, resize_hwc, resize_maps, to_chw):
    """Explicit enumeration of every scale/flip variant, averaged raw."""
    h, w = image.shape[:2]
    variants = []
    for s in scales:
        nh = max(1, int(round(h * s)))
        nw = max(1, int(round(w * s)))
        scaled = resize_hwc(image, nh, nw)
        variants.append((scaled, False))
        if use_hflip:
            variants.append((scaled[:, ::-1], True))
    acc = None
    for arr, flipped in variants:
        raw = model.forward_single(to_chw(arr)).raw_cams.maps
        up = resize_maps(raw, h, w)
        if flipped:
            up = up[:, :, ::-1]
        acc = up if acc is None else acc + up
    return acc / len(variants)

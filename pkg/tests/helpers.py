"""Independent oracle implementations used by the test suite.

Each oracle recomputes a result by the most transparent method
available — scalar loops, exhaustive enumeration, finite differences —
so production code is checked against something that cannot share its
bugs.
"""

from __future__ import annotations

import itertools

import numpy as np


# -- geometry ------------------------------------------------------------


def point_in_polygon(px: float, py: float, vertices) -> bool:
    """Scalar even-odd test for a single point.

    Uses the same crossing expression as the production rasterizer so
    boundary-grazing points agree bit-for-bit; only the looping
    strategy differs (per point here, vectorized there).
    """
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if y1 == y2:
            continue
        if (y1 > py) != (y2 > py):
            x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < x_cross:
                inside = not inside
    return inside


def rasterize_oracle(vertices, width: int, height: int) -> np.ndarray:
    """Exhaustive pixel-center rasterization, one pixel at a time."""
    mask = np.zeros((height, width), dtype=bool)
    for r in range(height):
        for c in range(width):
            mask[r, c] = point_in_polygon(c + 0.5, r + 0.5, vertices)
    return mask


def flood_components(mask: np.ndarray) -> list[set[tuple[int, int]]]:
    """8-connected components by explicit flood fill, in first-pixel order."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    components = []
    h, w = mask.shape
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            stack = [(r, c)]
            seen[r, c] = True
            pixels = set()
            while stack:
                rr, cc = stack.pop()
                pixels.add((rr, cc))
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        nr, nc = rr + dr, cc + dc
                        if (0 <= nr < h and 0 <= nc < w
                                and mask[nr, nc] and not seen[nr, nc]):
                            seen[nr, nc] = True
                            stack.append((nr, nc))
            components.append(pixels)
    return components


# -- convolution ---------------------------------------------------------


def conv2d_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  padding: int) -> np.ndarray:
    """Six nested loops, no tricks."""
    n, ci, hi, wi = x.shape
    co, _, k, _ = w.shape
    ho = hi + 2 * padding - k + 1
    wo = wi + 2 * padding - k + 1
    y = np.zeros((n, co, ho, wo), dtype=np.float64)
    for i in range(n):
        for o in range(co):
            for r in range(ho):
                for c in range(wo):
                    acc = float(b[o])
                    for ky in range(k):
                        for kx in range(k):
                            yy = r + ky - padding
                            xx = c + kx - padding
                            if 0 <= yy < hi and 0 <= xx < wi:
                                for ch in range(ci):
                                    acc += float(x[i, ch, yy, xx]) * \
                                        float(w[o, ch, ky, kx])
                    y[i, o, r, c] = acc
    return y


# -- finite differences ---------------------------------------------------


def fd_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def fd_gradient_at(f, x: np.ndarray, indices, step: float = 1e-5) -> dict:
    """Central differences at selected flat indices only."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray,
                      rel: float = 1e-3, abs_floor: float = 1e-5,
                      context: str = ""):
    """Elementwise |a - n| <= abs_floor + rel * max(|a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    g = np.asarray(numeric, dtype=np.float64)
    tol = abs_floor + rel * np.maximum(np.abs(a), np.abs(g))
    bad = np.abs(a - g) > tol
    if bad.any():
        idx = tuple(np.argwhere(bad)[0])
        raise AssertionError(
            f"gradient mismatch {context} at {idx}: "
            f"analytic {a[idx]!r} vs numeric {g[idx]!r}")


def unet_loss_and_decisions(net, x, t, positive_class_weight):
    """Loss plus a fingerprint of the forward pass's discrete choices.

    The fingerprint packs every ReLU sign mask and max-pool argmax.  A
    central difference spanning two parameter points is a valid
    derivative estimate only if both endpoints made identical choices;
    otherwise the loss is non-smooth inside the interval and the probe
    must be discarded, not failed.
    """
    from cavsearch.fcnn import ops as fcnn_ops

    net.forward(x, train=True)
    loss, _ = fcnn_ops.bce_loss(net.logits, t, positive_class_weight)
    marks = []
    for name, entry in net._cache.items():
        if name.startswith("pool"):
            windows = fcnn_ops._pool_windows(entry)
            marks.append(windows.argmax(axis=-1).astype(np.int8).tobytes())
        else:
            _, z = entry
            if z is not None:
                marks.append((z > 0).tobytes())
    net._cache = None
    return loss, b"".join(marks)


def unet_fd_param_gradient(net, name, indices, x, t, positive_class_weight,
                           step=1e-5):
    """Guarded central differences on one parameter tensor.

    Returns ``{flat_index: fd_value}`` for the probes whose +/- step
    evaluations share a decision fingerprint; unstable probes are
    omitted.
    """
    flat = net.params[name].reshape(-1)
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        loss_p, marks_p = unet_loss_and_decisions(net, x, t,
                                                  positive_class_weight)
        flat[i] = orig - step
        loss_m, marks_m = unet_loss_and_decisions(net, x, t,
                                                  positive_class_weight)
        flat[i] = orig
        if marks_p == marks_m:
            out[i] = (loss_p - loss_m) / (2 * step)
    return out


# -- matching -------------------------------------------------------------


def optimal_matching_size(iou: np.ndarray, cutoff: float) -> int:
    """Maximum one-to-one matching size with IoU strictly above cutoff.

    Exhaustive search over detection-index injections; fine for the
    ≤ 6 x 6 instances the tests use.
    """
    n_det, n_truth = iou.shape
    eligible = iou > cutoff
    best = 0
    truth_indices = list(range(n_truth))
    for size in range(min(n_det, n_truth), 0, -1):
        for dets in itertools.combinations(range(n_det), size):
            for truths in itertools.permutations(truth_indices, size):
                if all(eligible[d, t] for d, t in zip(dets, truths)):
                    return size
    return best


def is_unambiguous(iou: np.ndarray, cutoff: float) -> bool:
    """True when every row and column has at most one eligible pair."""
    eligible = iou > cutoff
    return (eligible.sum(axis=0).max(initial=0) <= 1
            and eligible.sum(axis=1).max(initial=0) <= 1)

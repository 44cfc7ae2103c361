"""Shared helpers for the test suite."""

import numpy as np

from natsel.tensor import GradTape, Tensor, backward


def finite_difference(build, params, step=1e-6):
    """Central-difference gradients of a scalar function of parameters.

    ``build(params) -> float`` must evaluate the function fresh from the
    current parameter values.  Returns one array per parameter.  This is
    the independent oracle route: no tape involved.
    """
    grads = []
    for p in params:
        flat = p.values.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = build(params)
            flat[i] = keep - step
            down = build(params)
            flat[i] = keep
            g[i] = (up - down) / (2.0 * step)
        grads.append(g.reshape(p.values.shape))
    return grads


def taped_gradients(build, params):
    """Tape-route gradients of ``build(params, tape) -> scalar Tensor``."""
    tape = GradTape()
    tape.register(*params)
    root = build(params, tape)
    grads = backward(tape, root)
    return [grads[p].values for p in params]


def max_relative_error(analytic, numeric, floor=1e-3):
    """max |a - n| / max(|a|, |n|, floor) over all entries.

    The floor keeps near-zero entries from exploding the ratio; 1e-3 is
    far above roundoff and far below any real gradient mismatch.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def random_tensor(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


def reference_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel bilinear resize oracle: explicit loops, four-term blend.

    Output pixel (i, j) samples the source at half-pixel centers
    ((i + 0.5) * H / H' - 0.5, (j + 0.5) * W / W' - 0.5), clamped to the
    valid range, then blends the four surrounding pixels.
    """
    h, w, c = img.shape
    out = np.empty((out_h, out_w, c))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                out[i, j, ch] = (
                    (1 - fy) * (1 - fx) * img[y0, x0, ch]
                    + (1 - fy) * fx * img[y0, x1, ch]
                    + fy * (1 - fx) * img[y1, x0, ch]
                    + fy * fx * img[y1, x1, ch]
                )
    return out


def centroid_model(dataset, scale=1.0, init_seed=0):
    """Linear nearest-centroid classifier for a labeled image dataset.

    weight[:, k] = scale * mean image of class k, bias[k] = -scale/2 *
    ||centroid_k||^2, so argmax logit = argmin distance to centroid.  On
    zero-noise template data this classifies perfectly, and ``scale``
    tunes the confidence (larger scale, lower loss) without changing the
    decision boundary.
    """
    from natsel.model import Classifier, ClassifierConfig

    shape = dataset.image_shape
    k = dataset.class_count
    model = Classifier(ClassifierConfig(
        input_shape=shape, hidden=(), class_count=k, init_seed=init_seed))
    weight = np.zeros((int(np.prod(shape)), k))
    bias = np.zeros((1, k))
    for c in range(k):
        centroid = dataset.images[dataset.labels == c].mean(axis=0).reshape(-1)
        weight[:, c] = scale * centroid
        bias[0, c] = -0.5 * scale * float(centroid @ centroid)
    model.parameters[0].values[...] = weight
    model.parameters[1].values[...] = bias
    return model

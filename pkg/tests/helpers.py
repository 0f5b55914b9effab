"""Shared test oracles: central finite differences for gradient checks."""

import numpy as np


def finite_difference_grads(f, arrays, eps=1e-4):
    """Central finite differences of the scalar f() w.r.t. each array element.

    ``arrays`` maps names to float64 numpy arrays that f() reads; they are
    perturbed in place and restored.
    """
    grads = {}
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * eps)
        grads[name] = g.reshape(arr.shape)
    return grads


def rel_error(a, b):
    """Norm-relative difference, robust to overall gradient scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return np.linalg.norm(a - b) / denom


def check_layer_gradients(layer, x, rng, eps=1e-4):
    """Gradient-check a layer through a random linear probe of its output.

    Returns the max relative error over the input and every parameter.
    """
    y0, _ = layer.forward(x)
    probe = rng.standard_normal(y0.shape)

    def scalar():
        y, _ = layer.forward(x)
        return float((y * probe).sum())

    y, cache = layer.forward(x)
    dx, grads = layer.backward(probe.astype(x.dtype), cache)

    arrays = {"__x__": x}
    arrays.update(layer.params)
    numeric = finite_difference_grads(scalar, arrays, eps=eps)

    errors = [rel_error(dx, numeric["__x__"])]
    for name in layer.params:
        errors.append(rel_error(grads[name], numeric[name]))
    return max(errors)

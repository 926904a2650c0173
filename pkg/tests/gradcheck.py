"""Central finite differences, kept independent of the analytic backward code."""
import numpy as np

H = 1e-5
FLOOR = 1e-6


def numeric_grad(f, x, h=H):
    """d f / d x for a scalar function of a float64 array, perturbing one entry at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=FLOOR):
    """Largest |a - n| / max(|a|, |n|, floor): relative where gradients are sizable,
    absolute (scaled by ``floor``) where both are essentially zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0

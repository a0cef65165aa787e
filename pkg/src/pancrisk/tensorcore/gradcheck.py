"""Central finite-difference gradient checking against a random output projection."""
import numpy as np


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, inputs, step=1e-5, seed=0, max_entries=None):
    """Compare reverse-mode and finite-difference gradients of ``sum(w * fn(*inputs))``.

    ``inputs`` are DiffArrays with requires_grad set. Returns the relative error
    of the concatenated gradient over all inputs. ``max_entries`` limits the number of perturbed entries
    per input (chosen at random) for large arrays.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    w = rng.standard_normal(out.shape)
    for x in inputs:
        x.zero_grad()
    (out * w).sum().backward()
    analytic_all, numeric_all = [], []
    for x in inputs:
        analytic = x.grad.copy()
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = float((fn(*inputs).data * w).sum())
            flat[i] = orig - step
            down = float((fn(*inputs).data * w).sum())
            flat[i] = orig
            numeric[n] = (up - down) / (2 * step)
        analytic_all.append(analytic.reshape(-1)[idx])
        numeric_all.append(numeric)
    return rel_error(np.concatenate(analytic_all), np.concatenate(numeric_all))

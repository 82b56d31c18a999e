"""Central finite-difference gradient checks."""
import numpy as np

from .tensor import Tensor, precision


def relative_error(analytic, numeric, floor=1e-3):
    """Max elementwise relative error.

    Components smaller than ``floor`` times the largest gradient component are
    compared against that floor instead of their own magnitude.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(fn, inputs, h=1e-5, seed=0):
    """Compare reverse-mode gradients of ``sum(fn(*inputs) * R)`` to central differences.

    ``inputs`` are arrays; each is wrapped in a grad-tracking double tensor.
    Returns a list with the max relative error per input.
    """
    rng = np.random.default_rng(seed)
    with precision("double"):
        arrays = [np.array(x, dtype=np.float64) for x in inputs]
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = fn(*tensors)
        proj = rng.standard_normal(out.shape)
        (out * proj).sum().backward()
        errors = []
        for i, a in enumerate(arrays):
            numeric = np.zeros_like(a)
            flat = numeric.reshape(-1)
            for j in range(a.size):
                plus, minus = [x.copy() for x in arrays], [x.copy() for x in arrays]
                plus[i].reshape(-1)[j] += h
                minus[i].reshape(-1)[j] -= h
                fp = float((fn(*[Tensor(x) for x in plus]).data * proj).sum())
                fm = float((fn(*[Tensor(x) for x in minus]).data * proj).sum())
                flat[j] = (fp - fm) / (2 * h)
            analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(a)
            errors.append(relative_error(analytic, numeric))
    return errors


def check_params(loss_fn, params, h=1e-5, max_entries=None, seed=0):
    """Finite-difference check of a scalar ``loss_fn()`` against every parameter in a ParamStore.

    ``max_entries`` limits the number of probed components per block (chosen at
    random, fixed by ``seed``).  Returns ``{name: max relative error}``.
    """
    rng = np.random.default_rng(seed)
    params.zero_grad()
    loss_fn().backward()
    report = {}
    for name, p in params.trainable():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.zeros(idx.size)
        for k, j in enumerate(idx):
            old = flat[j]
            flat[j] = old + h
            fp = float(loss_fn().data)
            flat[j] = old - h
            fm = float(loss_fn().data)
            flat[j] = old
            numeric[k] = (fp - fm) / (2 * h)
        report[name] = relative_error(analytic.reshape(-1)[idx], numeric)
    return report

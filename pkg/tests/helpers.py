"""Finite-difference oracles shared by the gradient tests."""
import numpy as np

from ostr import autograd as ag

# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line, flush=True)
    return passed


def numeric_grad(f, array, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``array`` (mutated in place)."""
    g = np.zeros_like(array)
    flat, gflat = array.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2 * h)
    return g


def numeric_grad_at(f, array, idx, h=1e-6):
    """Central differences of scalar ``f()`` at the flat positions ``idx`` of ``array``."""
    flat = array.reshape(-1)
    out = np.zeros(len(idx))
    for n, k in enumerate(idx):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        down = f()
        flat[k] = orig
        out[n] = (up - down) / (2 * h)
    return out


def max_rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_op(build, *arrays, h=1e-5, tol=1e-4, seed=0):
    """Compare autograd against finite differences for ``sum(build(*tensors) * R)``."""
    tensors = [ag.Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    out = build(*tensors)
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    (out * weights).sum().backward()

    def f():
        with ag.no_grad():
            return float((build(*tensors).data * weights).sum())

    errs = []
    for t in tensors:
        num = numeric_grad(f, t.data, h)
        ana = np.zeros_like(t.data) if t.grad is None else t.grad
        errs.append(max_rel_error(ana, num))
    assert max(errs) < tol, errs
    return errs

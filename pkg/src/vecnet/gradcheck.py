"""Central finite-difference verification of autograd gradients."""
from __future__ import annotations

from dataclasses import dataclass

import torch


def _perturbed(fn, tensors, directions, h):
    with torch.no_grad():
        for t, v in zip(tensors, directions):
            t.add_(h * v)
        value = float(fn())
        for t, v in zip(tensors, directions):
            t.sub_(h * v)
    return value


def directional_errors(fn, tensors, h=1e-3, n_random=1, seed=0, atol=1e-9):
    """Relative errors of analytic vs central-difference directional derivatives.

    ``fn`` maps the current values of ``tensors`` (float64, requires_grad) to a
    scalar.  Checks the normalised gradient direction and ``n_random`` random
    unit directions.  For random directions the error is measured against the
    gradient norm, since the directional derivative itself may be near zero.
    Derivatives that are both below ``atol`` (e.g. a parameter the output does
    not depend on) count as agreeing.
    """
    tensors = list(tensors)
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    value = fn()
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]
    gnorm = float(torch.sqrt(sum((g ** 2).sum() for g in grads)))
    gen = torch.Generator().manual_seed(seed)
    dirs = []
    if gnorm > atol:
        dirs.append(([g / gnorm for g in grads], None))
    for _ in range(n_random):
        v = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in tensors]
        norm = float(torch.sqrt(sum((x ** 2).sum() for x in v)))
        dirs.append(([x / norm for x in v], gnorm))
    errors = []
    for v, scale in dirs:
        analytic = float(sum((g * d).sum() for g, d in zip(grads, v)))
        numeric = (_perturbed(fn, tensors, v, h) - _perturbed(fn, tensors, v, -h)) / (2 * h)
        if max(abs(analytic), abs(numeric)) < atol:
            errors.append(0.0)
            continue
        denom = max(abs(analytic), abs(numeric), scale or 0.0)
        errors.append(abs(analytic - numeric) / denom)
    return errors


def max_relative_error(fn, tensors, h=1e-3, n_random=1, seed=0) -> float:
    return max(directional_errors(fn, tensors, h, n_random, seed))


@dataclass
class CoordinateCheck:
    error: float      # ||analytic - numeric|| / max(||analytic||, ||numeric||) over checked entries
    checked: int
    skipped: int      # entries whose difference quotient had not converged (a kink within the step)


def coordinate_check(fn, tensor, h=1e-3, max_entries=24, seed=0, atol=1e-9, conv_tol=1e-3):
    """Per-entry central differences with step ``h`` on up to ``max_entries`` sampled entries.

    Piecewise-smooth functions (ReLU, clamps, bilinear sampling) have kinks; a
    difference quotient straddling one is no oracle for the derivative.  Each
    entry is also evaluated at ``h / 2``: on a smooth stretch the first and
    second difference quotients at the two steps agree to O(h^2), while a kink
    anywhere within the step breaks one of the two agreements by a fraction of
    the slope jump.  Only entries that pass are compared with autograd, so the
    filter never looks at the analytic value and cannot hide a wrong gradient.
    """
    if tensor.grad is not None:
        tensor.grad = None
    grad, = torch.autograd.grad(fn(), [tensor], allow_unused=True)
    grad = torch.zeros_like(tensor) if grad is None else grad
    flat = tensor.data.view(-1)
    n = flat.numel()
    idx = torch.arange(n)
    if n > max_entries:
        idx = torch.randperm(n, generator=torch.Generator().manual_seed(seed))[:max_entries]
    analytic = grad.reshape(-1)[idx]
    scale = float(analytic.norm()) / max(1, len(idx)) ** 0.5

    def values(i):
        old = float(flat[i])
        out = {}
        with torch.no_grad():
            for step in (h, -h, h / 2, -h / 2):
                flat[i] = old + step
                out[step] = float(fn())
            flat[i] = old
        return out

    f0 = float(fn().detach())
    keep, numeric = [], []
    for j, i in enumerate(idx.tolist()):
        f = values(i)
        d1, d2 = (f[h] - f[-h]) / (2 * h), (f[h / 2] - f[-h / 2]) / h
        s1, s2 = (f[h] - 2 * f0 + f[-h]) / h, (f[h / 2] - 2 * f0 + f[-h / 2]) / (h / 2)
        # smooth: both gaps are O(h^2); a kink within the step makes one of them O(1)
        gap = max(abs(d1 - d2), abs(s1 - 2 * s2))
        if gap <= conv_tol * max(abs(d1), scale) + atol:
            keep.append(j)
            numeric.append(d1)
    if not keep:
        return CoordinateCheck(0.0, 0, len(idx))
    a = analytic[keep]
    num = torch.tensor(numeric, dtype=a.dtype)
    denom = max(float(a.norm()), float(num.norm()))
    err = 0.0 if denom < atol else float((a - num).norm()) / denom
    return CoordinateCheck(err, len(keep), len(idx) - len(keep))


def module_errors(fn, module, h=1e-3, seed=0, max_entries=24, min_checked=0.5) -> dict:
    """Per-parameter relative error for every parameter of ``module``.

    A parameter where fewer than ``min_checked`` of the sampled entries had a
    converged difference quotient reports ``inf``.
    """
    out = {}
    for name, p in module.named_parameters():
        res = coordinate_check(fn, p, h, max_entries, seed)
        total = res.checked + res.skipped
        out[name] = res.error if res.checked >= min_checked * total else float("inf")
    return out

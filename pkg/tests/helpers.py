"""Shared test oracles: central finite differences and small fixtures."""

import math

import torch

torch.set_default_dtype(torch.float32)


def scalarize(out, seed=1234):
    """Project a tensor onto a fixed random direction so any output becomes a scalar."""
    if out.dim() == 0:
        return out
    g = torch.Generator().manual_seed(seed)
    r = torch.randn(out.shape, generator=g, dtype=out.dtype)
    return (out * r).sum()


def _fd_entries(fn, tensor, indices, step):
    grads = []
    flat = tensor.data.view(-1)
    for i in indices:
        old = flat[i].item()
        flat[i] = old + step
        plus = fn().item()
        flat[i] = old - step
        minus = fn().item()
        flat[i] = old
        grads.append((plus - minus) / (2 * step))
    return torch.tensor(grads, dtype=torch.float64)


def gradient_error(fn, tensors, step=1e-5, max_entries=None, seed=0):
    """Norm-relative error between autograd and central differences of scalar ``fn()``.

    ``tensors`` are float64 leaves that ``fn`` reads; at most ``max_entries``
    randomly chosen coordinates of each are probed, all of them if ``None``.
    """
    for t in tensors:
        assert t.dtype == torch.float64
        t.requires_grad_(True)
        t.grad = None
    fn().backward()
    g = torch.Generator().manual_seed(seed)
    analytic, numeric = [], []
    with torch.no_grad():
        for t in tensors:
            n = t.numel()
            if max_entries is None or n <= max_entries:
                idx = torch.arange(n)
            else:
                idx = torch.randperm(n, generator=g)[:max_entries]
            grad = torch.zeros_like(t) if t.grad is None else t.grad
            analytic.append(grad.reshape(-1)[idx].to(torch.float64))
            numeric.append(_fd_entries(fn, t, idx.tolist(), step))
    a, b = torch.cat(analytic), torch.cat(numeric)
    return float((a - b).norm() / b.norm().clamp_min(1e-300))


def module_gradient_error(module, x, step=1e-5, max_entries=64, seed=0):
    """Gradient check of ``scalarize(module(x))`` w.r.t. ``x`` and the module parameters."""
    module = module.double()
    x = x.double().clone()
    params = [p for p in module.parameters()]
    return gradient_error(lambda: scalarize(module(x)), [x, *params], step, max_entries, seed)


def randomize_layer_scales(model, low=0.5, high=1.0, seed=0):
    """Set every layer scale to O(1) so gradients reach the block internals."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("gamma1") or name.endswith("gamma2"):
                p.copy_(low + (high - low) * torch.rand(p.shape, generator=g, dtype=p.dtype))
    return model


def naive_psnr(x, y):
    flat_x, flat_y = x.flatten().tolist(), y.flatten().tolist()
    mse = sum((a - b) ** 2 for a, b in zip(flat_x, flat_y)) / len(flat_x)
    return 10 * math.log10(1.0 / mse)


def naive_ssim(x, y):
    size, sigma = 11, 1.5
    g = [math.exp(-((i - 5) ** 2) / (2 * sigma**2)) for i in range(size)]
    total = sum(g)
    g = [v / total for v in g]
    w = [[g[i] * g[j] for j in range(size)] for i in range(size)]
    c1, c2 = 0.01**2, 0.03**2
    _, ch, h, wd = x.shape
    vals = []
    for c in range(ch):
        a, b = x[0, c].tolist(), y[0, c].tolist()
        for i in range(h - size + 1):
            for j in range(wd - size + 1):
                mx = my = sxx = syy = sxy = 0.0
                for u in range(size):
                    for v in range(size):
                        p, q, k = a[i + u][j + v], b[i + u][j + v], w[u][v]
                        mx += k * p
                        my += k * q
                        sxx += k * p * p
                        syy += k * q * q
                        sxy += k * p * q
                vx, vy, cov = sxx - mx * mx, syy - my * my, sxy - mx * my
                vals.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)

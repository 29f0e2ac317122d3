"""Central finite-difference gradient comparison used across the test suite."""
import torch


def rel_error(f, tensors, eps=1e-6, probe=None, generator=None):
    """Norm-wise relative error between autograd and central differences.

    ``f`` maps the float64 ``tensors`` to a scalar. ``probe`` limits the check to
    that many randomly chosen entries (over all tensors).
    """
    tensors = [t.detach().clone().double().requires_grad_(True) for t in tensors]
    out = f(*tensors)
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]
    slots = [(k, i) for k, t in enumerate(tensors) for i in range(t.numel())]
    if probe is not None and probe < len(slots):
        g = generator or torch.Generator().manual_seed(0)
        pick = torch.randperm(len(slots), generator=g)[:probe]
        slots = [slots[i] for i in pick.tolist()]
    analytic, numeric = [], []
    with torch.no_grad():
        for k, i in slots:
            flat = tensors[k].view(-1)
            old = flat[i].item()
            flat[i] = old + eps
            hi = f(*tensors).item()
            flat[i] = old - eps
            lo = f(*tensors).item()
            flat[i] = old
            numeric.append((hi - lo) / (2 * eps))
            analytic.append(grads[k].reshape(-1)[i].item())
    a, n = torch.tensor(analytic), torch.tensor(numeric)
    scale = max(a.norm().item(), n.norm().item(), 1e-12)
    return (a - n).norm().item() / scale

"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch


@dataclass
class GradcheckReport:
    max_rel_err: float
    max_abs_err: float
    n_checked: int

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


def gradcheck(
    fn: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    h: float = 1e-3,
    max_entries: int | None = None,
    generator: torch.Generator | None = None,
) -> GradcheckReport:
    """Compare autograd against central differences for a scalar ``fn(*inputs)``.

    Inputs are promoted to float64. The relative error is the largest absolute
    deviation divided by the largest gradient magnitude seen (analytic or numeric),
    which keeps near-zero entries from dominating. ``max_entries`` randomly
    subsamples coordinates per input.
    """
    xs = [x.detach().to(torch.float64).clone().requires_grad_(True) for x in inputs]
    out = fn(*xs)
    if out.numel() != 1:
        raise ValueError("gradcheck needs a scalar-valued function")
    analytic = torch.autograd.grad(out, xs, allow_unused=True)

    max_abs = 0.0
    scale = 0.0
    count = 0
    with torch.no_grad():
        for x, g in zip(xs, analytic):
            g = torch.zeros_like(x) if g is None else g
            flat = x.view(-1)
            idx = torch.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                idx = torch.randperm(flat.numel(), generator=generator)[:max_entries]
            for i in idx.tolist():
                orig = flat[i].item()
                flat[i] = orig + h
                fp = fn(*xs).item()
                flat[i] = orig - h
                fm = fn(*xs).item()
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                ana = g.view(-1)[i].item()
                max_abs = max(max_abs, abs(num - ana))
                scale = max(scale, abs(num), abs(ana))
                count += 1
    rel = max_abs / scale if scale > 0 else max_abs
    return GradcheckReport(rel, max_abs, count)


def module_gradcheck(
    module: torch.nn.Module,
    loss_fn: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    h: float = 1e-3,
) -> GradcheckReport:
    """Gradcheck ``loss_fn(module(x))`` with respect to every parameter and the input."""
    module = module.double()
    names, params = zip(*module.named_parameters())

    def fn(inp, *ps):
        state = dict(zip(names, ps))
        return loss_fn(torch.func.functional_call(module, state, (inp,)))

    return gradcheck(fn, [x, *params], h=h)

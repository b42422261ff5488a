import copy
import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import pytorch_lightning as pl
import torch
from torch import nn

logger = logging.getLogger(__name__)


def set_precision(double: bool = False) -> torch.dtype:
    dtype = torch.float64 if double else torch.float32
    torch.set_default_dtype(dtype)
    return dtype


def enable_determinism(seed: int) -> None:
    pl.seed_everything(seed, workers=True)
    torch.use_deterministic_algorithms(True)
    logger.info("Deterministic algorithms enabled, seed %d", seed)


def backward(
    network: nn.Module, inputs: torch.Tensor, output_grad: torch.Tensor
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Vector-Jacobian product of the network at ``inputs``: gradient w.r.t. the input and every parameter."""
    inputs = inputs.detach().requires_grad_(True)
    names, params = zip(*[(n, p) for n, p in network.named_parameters() if p.requires_grad])
    outputs = network(inputs)
    grads = torch.autograd.grad(outputs, (inputs,) + tuple(params), grad_outputs=output_grad, allow_unused=True)
    param_grads = {
        name: (grad if grad is not None else torch.zeros_like(param))
        for name, param, grad in zip(names, params, grads[1:])
    }
    return grads[0], param_grads


def check_gradients(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor], atol: float = 1e-7) -> bool:
    """torch.autograd.gradcheck in 64-bit arithmetic."""
    inputs = tuple(x.detach().double().requires_grad_(True) for x in inputs)
    return torch.autograd.gradcheck(fn, inputs, eps=1e-6, atol=atol, rtol=1e-7)


def gradient_error(network: nn.Module, inputs: torch.Tensor, eps: float = 1e-6) -> float:
    """Relative error between the 32-bit analytic input gradient of ``sum(network(x))`` and a 64-bit central FD."""
    net32 = copy.deepcopy(network).float()
    x32 = inputs.detach().float().requires_grad_(True)
    (analytic,) = torch.autograd.grad(net32(x32).sum(), x32)

    net64 = copy.deepcopy(network).double()
    x64 = inputs.detach().double().clone()
    numeric = torch.zeros_like(x64)
    flat, numeric_flat = x64.view(-1), numeric.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + eps
            plus = net64(x64).sum().item()
            flat[i] = original - eps
            minus = net64(x64).sum().item()
            flat[i] = original
            numeric_flat[i] = (plus - minus) / (2 * eps)

    diff = torch.linalg.norm(analytic.double() - numeric)
    scale = torch.maximum(torch.linalg.norm(numeric), torch.tensor(1e-12, dtype=torch.float64))
    return float(diff / scale)


def make_adam(params: Iterable[torch.Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=betas, eps=eps)


def adam_step(
    optimizer: torch.optim.Optimizer, params: Sequence[torch.Tensor], grads: Sequence[Optional[torch.Tensor]]
) -> List[torch.Tensor]:
    """Writes ``grads`` into the parameters and applies one optimizer step; returns the updated parameters."""
    for param, grad in zip(params, grads):
        param.grad = None if grad is None else grad.detach().clone()
    optimizer.step()
    return list(params)


def parameter_bytes(network: nn.Module) -> int:
    return sum(p.numel() * p.element_size() for p in network.parameters())

"""Finite-difference verification of analytic gradients.

Checks run a layer (or whole network) forward, project the output onto a
fixed random direction to get a scalar loss, then compare the analytic
backward pass against central differences for every trainable parameter
entry and every input entry.

Relative error for one entry is |a - n| / max(|a|, |n|, tau) where tau is
`tau_scale` times the largest analytic-gradient magnitude seen in the
check. Entries far below the gradient's overall scale are therefore judged
against that scale instead of against their own (noise-dominated) value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    h: float
    tau: float
    max_rel_error: float = 0.0
    worst_entry: str = ""
    tensor_errors: dict = field(default_factory=dict)
    checked_entries: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol

    def summary(self) -> str:
        return (
            f"max rel error {self.max_rel_error:.3e} at {self.worst_entry or '-'} "
            f"({self.checked_entries} entries, h={self.h:g})"
        )


def _sample_indices(size: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(size)
    count = max(1, int(round(size * fraction)))
    return rng.choice(size, size=count, replace=False)


def gradient_check(
    layer,
    x: np.ndarray,
    h: float = 1e-5,
    train: bool = True,
    projection: np.ndarray | None = None,
    projection_seed: int = 0,
    param_fraction: float = 1.0,
    check_input: bool = True,
    sample_seed: int = 0,
    tau_scale: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic and central-difference gradients of `layer` at `x`.

    Requires the 64-bit precision mode: `x` (and the layer's parameters)
    must be float64. `param_fraction` < 1 samples that fraction of each
    parameter tensor's entries instead of sweeping all of them.
    """
    if x.dtype != np.float64:
        raise ValueError("gradient_check requires float64 inputs (64-bit mode)")
    x = x.copy()

    trainable = [(name, p) for name, p in layer.named_parameters() if p.trainable]
    frozen = {name: p.value.copy() for name, p in layer.named_parameters() if not p.trainable}

    def restore_frozen():
        for name, p in layer.named_parameters():
            if not p.trainable:
                np.copyto(p.value, frozen[name])

    y = layer.forward(x, train)
    if projection is None:
        projection = np.random.default_rng(projection_seed).standard_normal(y.shape)
    projection = projection.astype(np.float64)

    layer.zero_grad()
    grad_x = layer.backward(projection)
    analytic = {name: p.grad.copy() for name, p in trainable}
    analytic["input"] = grad_x.copy()

    gmax = max((float(np.max(np.abs(g))) for g in analytic.values()), default=0.0)
    tau = tau_scale * max(gmax, 1e-6)

    def loss() -> float:
        restore_frozen()
        return float(np.sum(layer.forward(x, train) * projection))

    rng = np.random.default_rng(sample_seed)
    report = GradCheckReport(h=h, tau=tau)

    def check_tensor(name: str, values: np.ndarray, grads: np.ndarray, fraction: float):
        flat = values.reshape(-1)
        gflat = grads.reshape(-1)
        worst = 0.0
        for idx in _sample_indices(flat.size, fraction, rng):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = loss()
            flat[idx] = orig - h
            f_minus = loss()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = gflat[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), tau)
            report.checked_entries += 1
            if rel > worst:
                worst = rel
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_entry = f"{name}[{idx}]"
        report.tensor_errors[name] = worst

    for name, p in trainable:
        check_tensor(name, p.value, analytic[name], param_fraction)
    if check_input:
        check_tensor("input", x, analytic["input"], param_fraction)

    restore_frozen()
    return report

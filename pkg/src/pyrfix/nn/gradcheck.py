"""Central finite-difference verification of analytic gradients.

Checks run at double precision on small dims: the scalar probe is
sum(output * R) for a fixed random cotangent R, compared component-wise
against (f(th+eps) - f(th-eps)) / (2 eps).  The relative error divides by
max(|analytic|, |numeric|, 1), so tiny gradients are judged absolutely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import Module


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    tolerance: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    note: str = ""

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_rel_err:.3e} " \
               f"(tol {self.tolerance:.1e}) {self.note}"


def _as_tuple(x) -> tuple:
    return x if isinstance(x, tuple) else (x,)


def grad_check(module: Module, inputs, epsilon: float = 1e-5,
               tolerance: float = 1e-4, wrt_inputs: tuple[int, ...] = (),
               rng: np.random.Generator | None = None,
               forward=None, backward=None) -> GradCheckReport:
    """Compare module.backward against central differences.

    ``inputs`` is the argument tuple for ``module.forward``; float entries
    listed in ``wrt_inputs`` are checked as inputs.  ``forward``/``backward``
    override the calls for modules with non-default signatures (``backward``
    receives the cotangents and must return per-input gradients).
    """
    rng = rng or np.random.default_rng(0)
    inputs = tuple(inputs)
    fwd = forward if forward is not None else module.forward

    def run():
        out = fwd(*inputs)
        module.clear_caches()
        return _as_tuple(out)

    outputs = _as_tuple(fwd(*inputs))
    cotangents = tuple(rng.standard_normal(np.shape(o)) for o in outputs)
    if not all(np.all(np.isfinite(o)) for o in outputs):
        return GradCheckReport(False, np.inf, tolerance,
                               note="non-finite forward output")

    module.zero_grad()
    if backward is not None:
        input_grads = _as_tuple(backward(*cotangents))
    else:
        input_grads = _as_tuple(module.backward(*cotangents))
    analytic = dict(module.named_grads())
    for idx in wrt_inputs:
        analytic[f"input.{idx}"] = input_grads[idx]

    def probe() -> float:
        outs = run()
        return float(sum(np.sum(o * r) for o, r in zip(outs, cotangents)))

    per_tensor: dict[str, float] = {}
    targets = dict(module.named_parameters())
    for idx in wrt_inputs:
        targets[f"input.{idx}"] = inputs[idx]
    max_err = 0.0
    for name, tensor in targets.items():
        grad = analytic[name]
        if not np.all(np.isfinite(grad)):
            return GradCheckReport(False, np.inf, tolerance,
                                   note=f"non-finite gradient for {name}")
        worst = 0.0
        flat = tensor.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = probe()
            flat[i] = orig - epsilon
            minus = probe()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * epsilon)
            denom = max(abs(gflat[i]), abs(numeric), 1.0)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
        per_tensor[name] = worst
        max_err = max(max_err, worst)
    return GradCheckReport(max_err <= tolerance, max_err, tolerance, per_tensor)

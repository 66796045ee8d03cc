"""Finite-difference checks for every differentiable op and a small full network.

Each check reduces the op's output to a scalar through a fixed random
projection, backpropagates once, and compares every input gradient with
central differences at float64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import CanBlock, CanBlockConfig, VARIANTS
from .network import build, forward, make_spec
from .numerics import (
    BatchNormState,
    Tensor,
    backward,
    batchnorm2d,
    bce_loss,
    conv2d,
    dropout,
    finite_diff_grad,
    global_avg_pool,
    matmul,
    parameter,
    relative_error,
    relu,
    sigmoid,
    softmax_rows,
    where,
)
from .progrow import GrowthState, blend

TOLERANCE = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_inputs: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def check(name: str, inputs: list[Tensor], fn: Callable[[], Tensor], rng: np.random.Generator) -> CheckResult:
    """Compare analytic and numeric gradients of ``sum(fn() * R)`` for every input."""
    t0 = time.perf_counter()
    probe = rng.normal(size=fn().shape)

    def scalar() -> Tensor:
        return (fn() * probe).sum()

    analytic = [g.copy() for g in backward(scalar(), inputs)]
    worst = 0.0
    for p, g in zip(inputs, analytic):
        numeric = finite_diff_grad(lambda _: scalar().item(), p.data)
        worst = max(worst, relative_error(g, numeric))
    return CheckResult(name, worst, sum(p.size for p in inputs), time.perf_counter() - t0)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def op_checks(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    a = parameter(rng.normal(size=(2, 3, 4)))
    b = parameter(rng.normal(size=(3, 1)))
    out.append(check("add (broadcast)", [a, b], lambda: a + b, rng))
    out.append(check("mul (broadcast)", [a, b], lambda: a * b, rng))
    m1 = parameter(rng.normal(size=(2, 3, 4)))
    m2 = parameter(rng.normal(size=(4, 5)))
    out.append(check("matmul (batched)", [m1, m2], lambda: matmul(m1, m2), rng))
    out.append(check("reshape/swapaxes", [m1], lambda: m1.reshape(2, 4, 3).mT * 2.0, rng))
    out.append(check("sum/mean", [m1], lambda: m1.sum(axis=1) + m1.mean(axis=(0, 2), keepdims=True).sum(), rng))
    mask = rng.random((3, 4)) < 0.5
    out.append(check("where", [a, m1], lambda: where(mask, a, m1), rng))

    x = parameter(rng.normal(size=(2, 3, 6, 6)))
    k = parameter(rng.normal(size=(4, 3, 3, 3)))
    out.append(check("conv2d stride 1", [x, k], lambda: conv2d(x, k, 1, 1), rng))
    out.append(check("conv2d stride 2", [x, k], lambda: conv2d(x, k, 2, 1), rng))
    s = parameter(rng.normal(size=(2, 5, 5)))
    out.append(check("softmax_rows", [s], lambda: softmax_rows(s), rng))
    r = parameter(_away_from_zero(rng, (3, 7)))
    out.append(check("relu", [r], lambda: relu(r), rng))
    out.append(check("sigmoid", [s], lambda: sigmoid(s), rng))

    bn = BatchNormState.create(3)
    bn.scale.data[:] = rng.uniform(0.5, 1.5, 3)
    bn.shift.data[:] = rng.normal(size=3)
    out.append(check("batchnorm2d train", [x, bn.scale, bn.shift], lambda: batchnorm2d(x, bn, "train"), rng))
    out.append(check("batchnorm2d eval", [x, bn.scale, bn.shift], lambda: batchnorm2d(x, bn, "eval"), rng))
    out.append(check("global_avg_pool", [x], lambda: global_avg_pool(x), rng))
    d = parameter(rng.normal(size=(4, 6)))
    out.append(check("dropout", [d], lambda: dropout(d, 0.5, "train", np.random.default_rng(7)), rng))
    z = parameter(rng.normal(size=6) * 3)
    labels = (rng.random(6) < 0.5).astype(float)
    out.append(check("bce_loss", [z], lambda: bce_loss(z, labels).reshape(1), rng))

    f0 = parameter(rng.normal(size=(2, 3, 4, 4)))
    th = parameter(rng.normal(size=(2, 3, 4, 4)))
    sc = GrowthState("scalar", "transition", 0.25)
    out.append(check("blend scalar", [f0, th], lambda: blend(f0, th, sc), rng))
    bs = GrowthState("bernoulli", "transition", 0.5, omega=(rng.random((4, 4)) < 0.5).astype(float))
    out.append(check("blend bernoulli", [f0, th], lambda: blend(f0, th, bs), rng))
    return out


def block_checks(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    for variant in VARIANTS:
        for c_bar, stride in ((1, 1), (2, 2)):
            cfg = CanBlockConfig(3, 4, c_bar, stride, variant)
            blk = CanBlock.create(cfg, rng)
            # move the zero-initialised gates off their symmetric start; me enters the
            # gate quadratically in X, so a small scale keeps the sigmoid unsaturated
            for name, t in blk.params.named_tensors():
                if name in ("me", "se_b1", "se_b2") or name.startswith("bn"):
                    scale = 0.1 if name == "me" else 0.5
                    t.data[...] = rng.normal(size=t.shape) * scale + (1.0 if name == "bn.scale" else 0.0)
            x = parameter(rng.normal(size=(2, 3, 5, 5)))
            inputs = [x] + blk.parameters()
            out.append(check(f"{variant} block (C̄={c_bar}, stride {stride})", inputs, lambda: blk(x, "train"), rng))
    return out


def network_check(rng: np.random.Generator) -> CheckResult:
    """Two CAN blocks, pooling, dropout and the linear head, end to end through the loss."""
    spec = make_spec((16, 8, 8), [8, 16], [1, 2], extended_budget=0)
    net = build(spec, np.random.default_rng(int(rng.integers(2**31))))
    x = Tensor(rng.normal(size=(2, 16, 8, 8)))
    labels = np.array([0.0, 1.0])
    params = net.parameters()

    def loss() -> Tensor:
        net.dropout_rng = np.random.default_rng(123)
        return bce_loss(forward(net, x, "train"), labels).reshape(1)

    return check("network (2 blocks, BCE)", params, loss, rng)


def run_suite(seed: int = 0, include_network: bool = True) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = op_checks(rng) + block_checks(rng)
    if include_network:
        results.append(network_check(rng))
    return results

"""
Built-in numerical checks run by the ``selftest`` command: gradients of
random op graphs, flow roundtrips, and analytic vs brute-force log-determinants.
"""
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from app.core.flow import FlowModel
from app.core.layers import randomize_parameters
from app.core.tensor import (
    Tensor,
    concat_cols,
    div,
    exp,
    log,
    matmul,
    mul,
    neg,
    no_grad,
    slice_cols,
    sqrt,
    sub,
    sum_rows,
    take_cols,
    tanh,
    tensor_mean,
    tensor_sum,
)
from app.logging_config import logger
from app.models import FlowConfig
from app.utils.gradcheck import check_gradients, jacobian_logdet

Step = Callable[[Tensor], Tensor]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_graph(rng: np.random.Generator, depth: int = 6, max_dim: int = 12) -> Tuple[Callable[[], Tensor], List[Tensor]]:
    """
    Random composition of the supported ops over trainable leaves.
    Returns a closure rebuilding the scalar loss and the leaves to check.
    """
    rows, cols = int(rng.integers(1, max_dim + 1)), int(rng.integers(1, max_dim + 1))
    x = Tensor(rng.normal(size=(rows, cols)), requires_grad=True)
    params = [x]
    steps: List[Step] = []

    def leaf(shape) -> Tensor:
        t = Tensor(rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape), requires_grad=True)
        params.append(t)
        return t

    shape = (rows, cols)
    for _ in range(int(rng.integers(1, depth + 1))):
        choice = rng.choice([
            "matmul", "add_row", "mul", "sub", "div", "tanh", "exp", "log",
            "sqrt", "neg", "mean", "sum_rows", "transpose", "concat", "slice", "permute",
        ])
        m, n = shape
        if choice == "matmul":
            k = int(rng.integers(1, max_dim + 1))
            w = leaf((n, k))
            steps.append(lambda h, w=w: matmul(h, w))
            shape = (m, k)
        elif choice == "add_row":
            b = leaf((1, n))
            steps.append(lambda h, b=b: h + b)
        elif choice == "mul":
            p = leaf((m, n))
            steps.append(lambda h, p=p: mul(h, p))
        elif choice == "sub":
            p = leaf((m, 1))
            steps.append(lambda h, p=p: sub(h, p))
        elif choice == "div":
            p = leaf((1, n))
            steps.append(lambda h, p=p: div(h, p.square() + 1.0))
        elif choice == "tanh":
            steps.append(tanh)
        elif choice == "exp":
            steps.append(lambda h: exp(tanh(h)))
        elif choice == "log":
            steps.append(lambda h: log(h.square() + 1.0))
        elif choice == "sqrt":
            steps.append(lambda h: sqrt(h.square() + 1.0))
        elif choice == "neg":
            steps.append(neg)
        elif choice == "mean":
            steps.append(lambda h: h - tensor_mean(h))
        elif choice == "sum_rows":
            steps.append(sum_rows)
            shape = (m, 1)
        elif choice == "transpose":
            steps.append(lambda h: h.T)
            shape = (n, m)
        elif choice == "concat" and 2 * n <= max_dim:
            steps.append(lambda h: concat_cols([h, tanh(h)]))
            shape = (m, 2 * n)
        elif choice == "slice" and n >= 2:
            steps.append(lambda h, n=n: slice_cols(h, 0, n // 2))
            shape = (m, n // 2)
        elif choice == "permute":
            perm = rng.permutation(n)
            steps.append(lambda h, perm=perm: take_cols(h, perm))

    weights = Tensor(rng.normal(size=shape) / np.sqrt(shape[0] * shape[1]))

    def loss() -> Tensor:
        h = x
        for step in steps:
            h = step(h)
        return tensor_sum(mul(h, weights))

    return loss, params


def random_flow(rng: np.random.Generator, dim: int, blocks: int, cond_dim: int = 4, width: int = 16, scale: float = 0.1) -> FlowModel:
    flow = FlowModel.build(dim, cond_dim, FlowConfig(blocks=blocks, hidden_width=width), rng)
    randomize_parameters(flow.parameters(), rng, scale)
    return flow


def check_random_graphs(rng: np.random.Generator, count: int = 50) -> CheckResult:
    failed = 0
    worst = 0.0
    for _ in range(count):
        fn, params = random_graph(rng)
        result = check_gradients(fn, params)
        failed += not result.ok
        worst = max(worst, result.max_rel_error)
    return CheckResult("gradients", failed == 0, f"{count - failed}/{count} graphs, worst rel err {worst:.2e}")


def check_roundtrips(rng: np.random.Generator, dims=(8, 64, 256), blocks=(1, 4, 8, 16), batch: int = 16) -> CheckResult:
    worst = 0.0
    with no_grad():
        for d in dims:
            for b in blocks:
                flow = random_flow(rng, d, b)
                x = Tensor(rng.normal(size=(batch, d)))
                cond = Tensor(rng.normal(size=(batch, flow.cond_dim)))
                back = flow.inverse(flow.forward(x, cond).z, cond)
                again = flow.forward(flow.inverse(x, cond), cond).z
                worst = max(worst, float(np.abs(back.values - x.values).max()), float(np.abs(again.values - x.values).max()))
    return CheckResult("roundtrip", worst <= 1e-6, f"max abs roundtrip error {worst:.2e}")


def check_logdets(rng: np.random.Generator, dims=(2, 4, 8), per_dim: int = 5) -> CheckResult:
    worst = 0.0
    with no_grad():
        for d in dims:
            for _ in range(per_dim):
                flow = random_flow(rng, d, 3, scale=0.3)
                x = rng.normal(size=(1, d))
                cond = Tensor(rng.normal(size=(1, flow.cond_dim)))
                analytic = flow.forward(Tensor(x), cond).logdet.item()

                def fn(v: np.ndarray) -> np.ndarray:
                    return flow.forward(Tensor(v.reshape(1, -1)), cond).z.values.ravel()

                worst = max(worst, abs(analytic - jacobian_logdet(fn, x)))
    return CheckResult("logdet", worst <= 1e-3, f"max |analytic - brute force| {worst:.2e}")


def run_selftest(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [check_random_graphs(rng), check_roundtrips(rng), check_logdets(rng)]
    for r in results:
        log = logger.info if r.passed else logger.error
        log(f"selftest {r.name}: {'ok' if r.passed else 'FAILED'} ({r.detail})")
    return results

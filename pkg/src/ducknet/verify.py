"""Self-checks runnable from the command line: receptive fields, metric and
convolution oracles, and finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .duckblocks import (
    ParamStore,
    build_duck,
    build_midscope,
    build_residual,
    build_separated,
    build_simple_double,
    build_widescope,
    init_block_params,
    receptive_field,
    run_block,
)
from .metrics import METRIC_NAMES, ConfusionCounts, all_metrics, confusion_counts, dice_loss_soft
from .network import NetSpec, build_network
from .tensorcore import (
    BatchNormState,
    ConvParams,
    Mode,
    ShapeError,
    Tensor4,
    add,
    batchnorm,
    conv2d,
    conv2d_forward,
    conv_geometry,
    record_kinks,
    relu,
    sigmoid,
    upsample_nearest_2x,
)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


# ---------------------------------------------------------------------------
# receptive fields

RF_CLAIMS = (
    ("residual x1", lambda: build_residual(1, 1), 5),
    ("residual x2", lambda: build_residual(1, 2), 9),
    ("residual x3", lambda: build_residual(1, 3), 13),
    ("midscope", lambda: build_midscope(1), 7),
    ("widescope", lambda: build_widescope(1), 15),
)


def rf_suite() -> list[Check]:
    out = []
    for name, make, claim in RF_CLAIMS:
        rh, rw = receptive_field(make())
        out.append(Check(f"rf {name}", rh == rw == claim,
                         f"computed {rh}x{rw}, expected {claim}x{claim}"))
    return out


# ---------------------------------------------------------------------------
# metrics


def naive_counts(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> ConfusionCounts:
    tp = fp = fn = tn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p = pred[i, j] >= threshold
            g = gt[i, j] >= 0.5
            if p and g:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def naive_metrics(c: ConfusionCounts) -> dict[str, float]:
    def r(a, b):
        return 1.0 if b == 0 else a / b
    return {"dice": r(2 * c.tp, 2 * c.tp + c.fp + c.fn), "jaccard": r(c.tp, c.tp + c.fp + c.fn),
            "precision": r(c.tp, c.tp + c.fp), "recall": r(c.tp, c.tp + c.fn),
            "accuracy": r(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn)}


WORKED_EXAMPLE = (ConfusionCounts(3, 1, 2, 10), (0.66667, 0.5, 0.75, 0.6, 0.8125))


def metrics_suite(n_pairs: int = 1000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    mismatches = identity_fail = 0
    for _ in range(n_pairs):
        # mix dense, sparse and empty masks so degenerate denominators occur
        density = rng.choice([0.0, 0.05, 0.5, 0.95])
        gt = (rng.random((16, 16)) < density).astype(np.float32)
        pred = rng.random((16, 16))
        if rng.random() < 0.1:
            pred = np.zeros_like(pred)
        c = confusion_counts(pred, gt)
        if c != naive_counts(pred, gt) or all_metrics(c) != naive_metrics(naive_counts(pred, gt)):
            mismatches += 1
        m = all_metrics(c)
        if abs(m["dice"] - 2 * m["jaccard"] / (1 + m["jaccard"])) > 1e-12:
            identity_fail += 1
    counts, expected = WORKED_EXAMPLE
    got = all_metrics(counts)
    worked_ok = all(abs(got[k] - e) <= 1e-5 for k, e in zip(METRIC_NAMES, expected))
    return [
        Check("metrics oracle", mismatches == 0, f"{mismatches}/{n_pairs} pairs differ"),
        Check("dice = 2j/(1+j)", identity_fail == 0, f"{identity_fail}/{n_pairs} pairs violate"),
        Check("worked example tp=3 fp=1 fn=2 tn=10", worked_ok,
              " ".join(f"{k}={got[k]:.5f}" for k in METRIC_NAMES)),
    ]


# ---------------------------------------------------------------------------
# convolution oracle


def naive_conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Direct convolution: per output element, sum over (channel, row, col) from zero, then bias.

    Each product and each addition is rounded in the input dtype, exactly as a
    scalar loop would; the loop runs over taps and is vectorised over output
    positions only, which does not change any element's arithmetic.
    """
    n, cin, h, w = x.shape
    cout, _, kh, kw = p.kernel.shape
    g = conv_geometry(h, w, kh, kw, p)
    xp = np.zeros((n, cin, h + g.pad_top + g.pad_bottom, w + g.pad_left + g.pad_right), x.dtype)
    xp[:, :, g.pad_top:g.pad_top + h, g.pad_left:g.pad_left + w] = x
    sh, sw = p.stride
    dh, dw = p.dilation
    kern = p.kernel.astype(x.dtype)
    acc = np.zeros((n, cout, g.out_h, g.out_w), x.dtype)
    for c in range(cin):
        for ki in range(kh):
            for kj in range(kw):
                r0, c0 = ki * dh, kj * dw
                patch = xp[:, c, r0:r0 + sh * (g.out_h - 1) + 1:sh, c0:c0 + sw * (g.out_w - 1) + 1:sw]
                acc += kern[:, c, ki, kj][None, :, None, None] * patch[:, None]
    return acc + p.bias.astype(x.dtype)[None, :, None, None]


def random_conv_case(rng: np.random.Generator):
    while True:
        dtype = np.float32 if rng.random() < 0.5 else np.float64
        n = int(rng.integers(1, 3))
        cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        h, w = int(rng.integers(1, 25)), int(rng.integers(1, 25))
        kh, kw = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        stride = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        dilation = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        padding = "same" if rng.random() < 0.5 else "none"
        p = ConvParams(rng.standard_normal((cout, cin, kh, kw)).astype(dtype),
                       rng.standard_normal(cout).astype(dtype), stride, dilation, padding)
        try:
            conv_geometry(h, w, kh, kw, p)
        except ShapeError:
            continue
        return rng.standard_normal((n, cin, h, w)).astype(dtype), p


def conv_oracle_suite(n_cases: int = 500, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    bad = []
    for k in range(n_cases):
        x, p = random_conv_case(rng)
        got = conv2d_forward(x, p)
        want = naive_conv2d(x, p)
        if got.shape != want.shape or got.dtype != want.dtype or not np.array_equal(got, want):
            bad.append(f"case {k} x{x.shape} k{p.kernel.shape} s{p.stride} d{p.dilation} "
                       f"{p.padding.value} {x.dtype}")
    detail = f"{n_cases - len(bad)}/{n_cases} bit-exact" + (f"; first: {bad[0]}" if bad else "")
    return [Check("conv oracle", not bad, detail)]


# ---------------------------------------------------------------------------
# gradient checks

GRAD_STEP = 1e-4
GRAD_TOL = 1e-5
GRAD_GUARD = 1e-8
EPS64 = float(np.finfo(np.float64).eps)


@dataclass
class GradcheckResult:
    worst: float
    where: str
    checked: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.worst <= GRAD_TOL


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(fn: Callable[[], Tensor4], inputs: Sequence[Tensor4], seed: int = 0,
              max_coords: int = 12, step: float = GRAD_STEP) -> GradcheckResult:
    """Compare tape gradients of ``sum(fn() * R)`` against central differences.

    ``R`` is a fixed random projection so every output element matters.  Up to
    ``max_coords`` coordinates per input are checked, drawn at random.  A
    coordinate whose +/- step moves any relu input across zero is skipped (the
    function is not differentiable over that interval) and another is drawn.

    Error is ``|a - n| / max(|a|, |n|, guard)``.  The guard is 1e-8 or, if
    larger, the round-off floor of the difference quotient divided by the
    tolerance, so a gradient that is exactly zero by construction is compared
    against round-off rather than against zero.
    """
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(fn().shape)

    def evaluate() -> tuple[float, float, list[np.ndarray]]:
        with record_kinks() as log:
            terms = fn().data * proj
        return float(np.sum(terms)), float(np.sum(np.abs(terms))), log

    for t in inputs:
        t.grad = None
    _, _, base = evaluate()
    for t in inputs:
        t.grad = None
    fn().backward(proj)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst, where, checked, skipped = 0.0, "", 0, 0
    for idx, (t, a) in enumerate(zip(inputs, analytic)):
        done = 0
        for flat in rng.permutation(t.data.size):
            if done == max_coords:
                break
            c = np.unravel_index(flat, t.shape)
            orig = t.data[c]
            t.data[c] = orig + step
            up, mag_up, log_up = evaluate()
            t.data[c] = orig - step
            down, mag_down, log_down = evaluate()
            t.data[c] = orig
            if not (_same_pattern(base, log_up) and _same_pattern(base, log_down)):
                skipped += 1
                continue
            done += 1
            num = (up - down) / (2 * step)
            floor = 8 * EPS64 * max(mag_up, mag_down) / (2 * step)
            guard = max(GRAD_GUARD, floor / GRAD_TOL)
            err = abs(a[c] - num) / max(abs(a[c]), abs(num), guard)
            if err > worst:
                worst = err
                label = t.name or f"input {idx}"
                where = f"{label}{[int(v) for v in c]} analytic {a[c]:.6e} numeric {num:.6e}"
        checked += done
    return GradcheckResult(worst, where, checked, skipped)


def _leaf(rng, shape, name, scale=1.0):
    return Tensor4(rng.standard_normal(shape) * scale, requires_grad=True, name=name, dtype=np.float64)


def primitive_cases(seed: int = 0):
    """(name, fn, inputs) for every tensor operator."""
    rng = np.random.default_rng(seed)
    cases = []
    for stride, dil, pad, hw in [(1, 1, "same", (7, 9)), (1, 2, "same", (8, 6)),
                                 (2, 1, "none", (8, 8)), (1, 1, "none", (20, 20)),
                                 (1, 3, "same", (18, 18)), ((1, 2), (2, 1), "same", (9, 11))]:
        x = _leaf(rng, (2, 3) + hw, "x")
        kshape = (4, 3, 2, 2) if pad == "none" and stride == 2 else (4, 3, 3, 3)
        w = _leaf(rng, kshape, "w", 0.5)
        b = _leaf(rng, (4,), "b")
        cases.append((f"conv2d stride={stride} dilation={dil} {pad} {hw}",
                      lambda x=x, w=w, b=b, s=stride, d=dil, p=pad: conv2d(x, w, b, s, d, p),
                      [x, w, b]))
    x = _leaf(rng, (2, 3, 5, 5), "x")
    cases.append(("relu", lambda: relu(x), [x]))
    x2 = _leaf(rng, (2, 3, 5, 5), "x")
    cases.append(("sigmoid", lambda: sigmoid(x2), [x2]))
    x3 = _leaf(rng, (1, 2, 3, 4), "x")
    cases.append(("upsample_nearest_2x", lambda: upsample_nearest_2x(x3), [x3]))
    a, b2 = _leaf(rng, (2, 2, 3, 3), "a"), _leaf(rng, (2, 2, 3, 3), "b")
    cases.append(("add", lambda: add(a, b2), [a, b2]))
    for mode in (Mode.TRAIN, Mode.INFER):
        xb = _leaf(rng, (3, 4, 5, 5), "x")
        s = BatchNormState.create(4, np.float64, name="bn")
        s.gamma.data[:] = rng.uniform(0.5, 1.5, 4)
        s.beta.data[:] = rng.standard_normal(4)
        s.running_mean[:] = rng.standard_normal(4)
        s.running_var[:] = rng.uniform(0.5, 2.0, 4)
        cases.append((f"batchnorm {mode.value}", lambda xb=xb, s=s, m=mode: batchnorm(xb, s, m),
                      [xb, s.gamma, s.beta]))
    pl = Tensor4(rng.uniform(0.05, 0.95, (2, 1, 4, 4)), requires_grad=True, name="p", dtype=np.float64)
    gt = (rng.random((2, 1, 4, 4)) < 0.5).astype(np.float64)
    cases.append(("dice_loss_soft", lambda: dice_loss_soft(pl, gt), [pl]))
    return cases


BLOCK_BUILDERS = (
    ("residual x1", lambda f: build_residual(f, 1)),
    ("residual x2", lambda f: build_residual(f, 2)),
    ("residual x3", lambda f: build_residual(f, 3)),
    ("midscope", build_midscope),
    ("widescope", build_widescope),
    ("separated", build_separated),
    ("duck", build_duck),
    ("simple double", build_simple_double),
)


def block_cases(filters: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    cases = []
    for name, make in BLOCK_BUILDERS:
        spec = make(filters)
        store = ParamStore(np.float64)
        init_block_params(spec, 2, store, "blk", rng)
        x = _leaf(rng, (1, 2, 12, 12), "input")
        cases.append((f"block {name} F={filters}",
                      lambda spec=spec, store=store, x=x: run_block(spec, store, x, Mode.TRAIN, "blk"),
                      [x] + store.trainable()))
    return cases


def network_case(seed: int = 0):
    spec = NetSpec(filters=2, depth=3, input_size=(32, 32))
    net = build_network(spec, seed=seed, dtype=np.float64)
    x = _leaf(np.random.default_rng(seed), (1, 3, 32, 32), "image")
    return ("network depth=3 F=2 32x32", lambda: net.forward(x, Mode.TRAIN),
            [x] + net.store.trainable())


def gradcheck_suite(seed: int = 0, include_network: bool = True) -> list[Check]:
    cases = primitive_cases(seed) + block_cases(seed=seed)
    if include_network:
        cases.append(network_case(seed))
    out = []
    for name, fn, inputs in cases:
        limit = 12 if len(inputs) <= 3 else 3
        r = gradcheck(fn, inputs, seed=seed, max_coords=limit)
        detail = f"max rel err {r.worst:.2e} over {r.checked} coords ({r.skipped} skipped at relu kinks)"
        if not r.passed:
            detail += f"; worst at {r.where}"
        out.append(Check(f"gradcheck {name}", r.passed, detail))
    return out


SUITES = {
    "rf": rf_suite,
    "metrics": metrics_suite,
    "conv-oracle": conv_oracle_suite,
    "gradcheck": gradcheck_suite,
}


def run_suite(name: str) -> list[Check]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    return SUITES[name]()


def all_passed(checks: Sequence[Check]) -> bool:
    return all(c.passed for c in checks)

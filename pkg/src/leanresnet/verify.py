"""Self-check suite behind ``leanresnet verify``.

Each check returns ``(ok, detail)``; ``run_all`` prints one line per check.
"""
from __future__ import annotations

import io

import numpy as np

from leanresnet import layers
from leanresnet.conv import (
    DenseConvWeights,
    LeanConv3dWeights,
    LeanConvWeights,
    available_backends,
    dense_conv2d,
    dense_conv2d_backward,
    lean_conv2d_backward,
    lean_conv2d_fused,
    lean_conv2d_reference,
    lean_conv3d,
    lean_conv3d_backward,
    lean_to_dense,
)
from leanresnet.data import synthetic_quadrants
from leanresnet.gradcheck import numerical_gradient, projected_loss, relative_error
from leanresnet.network import (
    PRESETS,
    NetworkConfig,
    build_network,
    count_params,
    net_backward,
    net_loss,
)
from leanresnet.optim import AdamState, TrainPlan, adam_step, fit, lr_at_epoch
from leanresnet.tensor import max_abs_diff

CHANNELS = (1, 3, 4, 16, 64)
GRAD_TOL = 1e-6

# published parameter counts (lean / dense) per preset and the accepted relative band
REFERENCE_COUNTS = {("A", "lean"): 0.5e6, ("C", "lean"): 2.9e6, ("E", "lean"): 2.0e6,
                    ("A", "dense"): 4.3e6, ("C", "dense"): 27e6, ("E", "dense"): 17e6}
REFERENCE_CLASSES = {"A": 10, "C": 100, "E": 10}
REFERENCE_BAND = 0.15


def random_lean(rng, c_in, c_out, stride=1, dtype=np.float64):
    return LeanConvWeights(rng.standard_normal((c_out, c_in)).astype(dtype) / np.sqrt(c_in),
                           rng.standard_normal((min(c_in, c_out), 4)).astype(dtype) * 0.5, stride)


def random_cases(n, seed=0, max_map=32):
    """``n`` random (c_in, c_out, h, w, stride) cases, shared by the equivalence checks."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield (int(rng.choice(CHANNELS)), int(rng.choice(CHANNELS)),
               int(rng.integers(1, max_map + 1)), int(rng.integers(1, max_map + 1)),
               int(rng.choice((1, 2))))


def check_fused_reference(n_cases=200, seed=0):
    rng = np.random.default_rng(seed + 1)
    worst = {np.float32: 0.0, np.float64: 0.0}
    for c_in, c_out, h, w, s in random_cases(n_cases, seed):
        batch = int(rng.integers(1, 3))
        for dtype in (np.float32, np.float64):
            x = rng.standard_normal((batch, c_in, h, w)).astype(dtype)
            wt = random_lean(rng, c_in, c_out, s, dtype)
            ref = lean_conv2d_reference(x, wt)
            for backend in available_backends():
                worst[dtype] = max(worst[dtype], max_abs_diff(lean_conv2d_fused(x, wt, backend=backend), ref))
    ok = worst[np.float32] <= 1e-5 and worst[np.float64] <= 1e-12
    return ok, f"max diff single {worst[np.float32]:.2e}, double {worst[np.float64]:.2e}"


def check_dense_embedding(n_cases=200, seed=0):
    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    for c_in, c_out, h, w, s in random_cases(n_cases, seed):
        x = rng.standard_normal((1, c_in, h, w))
        wt = random_lean(rng, c_in, c_out, s)
        worst = max(worst, max_abs_diff(dense_conv2d(x, lean_to_dense(wt)), lean_conv2d_fused(x, wt)))
    return worst <= 1e-12, f"max diff {worst:.2e}"


def check_linearity(seed=0):
    rng = np.random.default_rng(seed)
    wt = random_lean(rng, 5, 7, 2)
    x1, x2 = rng.standard_normal((2, 2, 5, 9, 9))
    a, b = 1.7, -0.3
    lhs = lean_conv2d_fused(a * x1 + b * x2, wt)
    rhs = a * lean_conv2d_fused(x1, wt) + b * lean_conv2d_fused(x2, wt)
    err = max_abs_diff(lhs, rhs)
    return err <= 1e-12, f"max diff {err:.2e}"


def check_adjoint(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for s in (1, 2):
        wt = random_lean(rng, 6, 4, s)
        x = rng.standard_normal((2, 6, 7, 8))
        y = lean_conv2d_fused(x, wt)
        dy = rng.standard_normal(y.shape)
        dx, _, _ = lean_conv2d_backward(x, wt, dy)
        lhs, rhs = np.vdot(y, dy), np.vdot(x, dx)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    return worst <= 1e-10, f"relative gap {worst:.2e}"


def _grad_errors(pairs):
    return max(relative_error(a, n) for a, n in pairs)


def grad_lean_conv(seed=0):
    rng = np.random.default_rng(seed)
    errs = []
    for c_in, c_out, s in ((3, 3, 1), (4, 2, 2), (2, 5, 1)):
        wt = random_lean(rng, c_in, c_out, s)
        x = rng.standard_normal((2, c_in, 5, 6))
        y = lean_conv2d_fused(x, wt)
        f, r = projected_loss(seed + 7, y.shape)
        dx, da, dst = lean_conv2d_backward(x, wt, r)
        loss = lambda: f(lean_conv2d_fused(x, wt))
        errs.append(_grad_errors([(dx, numerical_gradient(loss, x)), (da, numerical_gradient(loss, wt.alpha)),
                                  (dst, numerical_gradient(loss, wt.stencil))]))
    return max(errs)


def grad_dense_conv(seed=0):
    rng = np.random.default_rng(seed)
    errs = []
    for s in (1, 2):
        wt = DenseConvWeights(rng.standard_normal((3, 2, 3, 3)), s)
        x = rng.standard_normal((2, 2, 5, 6))
        f, r = projected_loss(seed + 3, dense_conv2d(x, wt).shape)
        dx, dk = dense_conv2d_backward(x, wt, r)
        loss = lambda: f(dense_conv2d(x, wt))
        errs.append(_grad_errors([(dx, numerical_gradient(loss, x)), (dk, numerical_gradient(loss, wt.kernel))]))
    return max(errs)


def grad_lean_conv3d(seed=0):
    rng = np.random.default_rng(seed)
    wt = LeanConv3dWeights(rng.standard_normal((3, 2)), rng.standard_normal((2, 6)))
    x = rng.standard_normal((1, 2, 3, 4, 3))
    f, r = projected_loss(seed + 5, (1, 3, 3, 4, 3))
    dx, da, dst = lean_conv3d_backward(x, wt, r)
    loss = lambda: f(lean_conv3d(x, wt))
    return _grad_errors([(dx, numerical_gradient(loss, x)), (da, numerical_gradient(loss, wt.alpha)),
                         (dst, numerical_gradient(loss, wt.stencil))])


def grad_batch_norm(seed=0):
    rng = np.random.default_rng(seed)
    p = layers.BatchNormParams(rng.standard_normal(3) + 1, rng.standard_normal(3), np.zeros(3), np.ones(3))
    x = rng.standard_normal((2, 3, 3, 4))
    errs = []
    for mode in ("train", "eval"):
        f, r = projected_loss(seed + 1, x.shape)
        _, cache = layers.batch_norm(x, p, mode, update_stats=False)
        dx, g = layers.batch_norm_backward(cache, p, r)
        loss = lambda: f(layers.batch_norm(x, p, mode, update_stats=False)[0])
        errs.append(_grad_errors([(dx, numerical_gradient(loss, x)), (g["scale"], numerical_gradient(loss, p.scale)),
                                  (g["shift"], numerical_gradient(loss, p.shift))]))
    return max(errs)


def grad_relu(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    f, r = projected_loss(seed, x.shape)
    return relative_error(layers.relu_backward(x, r), numerical_gradient(lambda: f(layers.relu(x)), x))


def grad_pool(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 5))
    f, r = projected_loss(seed, (2, 3))
    return relative_error(layers.global_avg_pool_backward(x.shape, r),
                          numerical_gradient(lambda: f(layers.global_avg_pool(x)), x))


def grad_classifier(seed=0):
    rng = np.random.default_rng(seed)
    p = layers.LinearParams(rng.standard_normal((4, 6)), rng.standard_normal(4))
    feats = rng.standard_normal((5, 6))
    labels = np.array([0, 3, 1, 1, 2])
    _, _, cache = layers.linear_softmax_ce(feats, labels, p)
    dfeat, g = layers.linear_softmax_ce_backward(cache, p)
    loss = lambda: layers.linear_softmax_ce(feats, labels, p)[0]
    return _grad_errors([(dfeat, numerical_gradient(loss, feats)), (g["weight"], numerical_gradient(loss, p.weight)),
                         (g["bias"], numerical_gradient(loss, p.bias))])


def _step_grad_error(step, y, seed):
    out, cache = layers.resnet_step(y, step, update_stats=False)
    f, r = projected_loss(seed, out.shape)
    dy, grads = layers.resnet_step_backward(cache, step, r)
    loss = lambda: f(layers.resnet_step(y, step, update_stats=False)[0])
    pairs = [(dy, numerical_gradient(loss, y))]
    for name, arr in step.named_parameters():
        pairs.append((grads[name], numerical_gradient(loss, arr)))
    return _grad_errors(pairs)


def grad_resnet_step(seed=0):
    net = build_network(NetworkConfig((3, 4), (1, 1)), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    errs = [_step_grad_error(net.blocks[0][0], rng.standard_normal((2, 3, 5, 5)), seed),
            _step_grad_error(net.blocks[1][0], rng.standard_normal((2, 3, 5, 5)), seed + 1)]
    dense = build_network(NetworkConfig((3,), (1,), conv_kind="dense"), seed=seed, dtype=np.float64)
    errs.append(_step_grad_error(dense.blocks[0][0], rng.standard_normal((2, 3, 4, 4)), seed + 2))
    return max(errs)


def grad_network(seed=0, conv_kind="lean"):
    net = build_network(NetworkConfig((2, 4), (1, 1), conv_kind=conv_kind), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 3, 6, 6))
    labels = np.array([1, 0, 9])
    _, _, cache = net_loss(net, x, labels, update_stats=False)
    grads = net_backward(net, cache)
    loss = lambda: net_loss(net, x, labels, update_stats=False)[0]
    return _grad_errors([(grads[name], numerical_gradient(loss, arr)) for name, arr in net.named_parameters()])


GRADIENT_CHECKS = {
    "lean conv": grad_lean_conv,
    "dense conv": grad_dense_conv,
    "lean conv 3d": grad_lean_conv3d,
    "batch norm": grad_batch_norm,
    "relu": grad_relu,
    "pooling": grad_pool,
    "classifier": grad_classifier,
    "residual step": grad_resnet_step,
    "tiny network": grad_network,
}


def check_gradients():
    errs = {name: fn() for name, fn in GRADIENT_CHECKS.items()}
    worst = max(errs, key=errs.get)
    return all(e <= GRAD_TOL for e in errs.values()), f"worst {worst}: {errs[worst]:.2e}"


def check_lean_param_count():
    ok = all(LeanConvWeights.zeros(c, c).parameter_count == c * c + 4 * c for c in range(1, 65))
    return ok, "c^2 + 4c for c = 1..64"


def check_layer_invariants(seed=0):
    rng = np.random.default_rng(seed)
    net = build_network(NetworkConfig((4,), (1,)), seed=seed, dtype=np.float64)
    step = net.blocks[0][0]
    for w in (step.conv1, step.conv2):
        w.alpha[...] = 0
        w.stencil[...] = 0
    y = rng.standard_normal((2, 4, 5, 5))
    zero_ok = np.array_equal(layers.resnet_step(y, step)[0], y)

    logits = rng.standard_normal((6, 5)) * 3
    _, _, d = layers.softmax_ce(logits, rng.integers(0, 5, 6))
    simplex = float(np.abs(d.sum(axis=1)).max())

    p = layers.BatchNormParams(rng.standard_normal(3), rng.standard_normal(3),
                               rng.standard_normal(3), rng.random(3) + 0.5)
    x = rng.standard_normal((2, 3, 4, 4))
    twice = layers.batch_norm(layers.batch_norm(x, p, "eval")[0], p, "eval")[0]
    g = p.scale / np.sqrt(p.running_var + p.eps)
    h = p.shift - p.running_mean * g
    composed = x * (g * g)[:, None, None] + (g * h + h)[:, None, None]
    affine = max_abs_diff(twice, composed)
    ok = zero_ok and simplex <= 1e-12 and affine <= 1e-12
    return ok, f"zero-step identity {zero_ok}, softmax row sums {simplex:.1e}, bn affine {affine:.1e}"


def check_presets():
    expected = {
        "A": ("32-64-128-256", "2-3-3-3"), "B": ("12-24-48-96", "2-3-3-3"),
        "C": ("64-128-256-512", "3-5-7-4"), "D": ("24-48-96-192", "3-5-7-4"),
        "E": ("32-64-128-256-512", "2-3-3-3-3"), "F": ("12-24-48-96-192", "2-3-3-3-3"),
    }
    ok = set(PRESETS) == set(expected)
    for k, (wd, st) in expected.items():
        cfg = NetworkConfig.preset(k)
        ok &= "-".join(map(str, cfg.widths)) == wd and "-".join(map(str, cfg.steps)) == st
    return ok, "six rows"


def reference_counts():
    out = {}
    for (kind, ck), target in REFERENCE_COUNTS.items():
        n = count_params(build_network(NetworkConfig.preset(kind, ck, REFERENCE_CLASSES[kind])))
        out[(kind, ck)] = (n, target)
    return out


def check_param_bands():
    counts = reference_counts()
    ok = all(abs(n - p) <= REFERENCE_BAND * p for n, p in counts.values())
    lean_smaller = True
    for k in PRESETS:
        lean = count_params(build_network(NetworkConfig.preset(k, "lean")))
        dense = count_params(build_network(NetworkConfig.preset(k, "dense")))
        lean_smaller &= lean < dense
    detail = ", ".join(f"{k}/{ck} {n / 1e6:.3f}M" for (k, ck), (n, _) in counts.items())
    return ok and lean_smaller, detail


def check_optim(seed=0):
    plan = TrainPlan()
    sched = [lr_at_epoch(plan, e) for e in (0, 75, 150, 225)]
    sched_ok = sched == [0.1, 0.05, 0.025, 0.0125]
    drops = sum(lr_at_epoch(plan, e) != lr_at_epoch(plan, e - 1) for e in range(1, plan.epochs))

    w = np.array([1.5, -2.0])
    state = AdamState()
    adam_step([("w", w)], {"w": np.zeros(2)}, state, 0.1)
    zero_ok = np.array_equal(w, [1.5, -2.0])
    adam_step([("w", w)], {"w": np.array([3.0, -0.2])}, AdamState(), 0.1)
    first_ok = np.allclose(np.abs(w - [1.5, -2.0]), 0.1, atol=1e-6)

    data = synthetic_quadrants(40, 8, seed=seed)
    cfg = NetworkConfig((4, 8), (1, 1))
    net = build_network(cfg, seed)
    before = [a.copy() for _, a in net.named_parameters()]
    fit(net, data, None, TrainPlan(epochs=1, batch_size=20, lr0=0.0, augment=False))
    lr0_ok = all(np.array_equal(a, b) for (_, a), b in zip(net.named_parameters(), before))

    csvs = []
    for _ in range(2):
        buf = io.StringIO()
        fit(build_network(cfg, seed), data, data, TrainPlan(epochs=2, batch_size=20, lr0=0.01, seed=seed), buf)
        csvs.append(buf.getvalue())
    det_ok = csvs[0] == csvs[1]
    ok = sched_ok and drops == plan.epochs // plan.decay_every - 1 and zero_ok and first_ok and lr0_ok and det_ok
    return ok, (f"schedule {sched}, drops {drops}, zero-grad {zero_ok}, first step {first_ok}, "
                f"lr=0 {lr0_ok}, deterministic {det_ok}")


CHECKS = {
    "fused == reference": check_fused_reference,
    "lean -> dense embedding": check_dense_embedding,
    "linearity": check_linearity,
    "adjoint": check_adjoint,
    "gradients": check_gradients,
    "lean parameter count": check_lean_param_count,
    "layer invariants": check_layer_invariants,
    "preset layouts": check_presets,
    "preset parameter bands": check_param_bands,
    "optimizer and schedule": check_optim,
}


def run_all(out=print) -> bool:
    all_ok = True
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # report and keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok

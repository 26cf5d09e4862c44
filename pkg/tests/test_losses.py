import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dipstack.errors import ConfigurationError, ShapeError
from dipstack.losses import (
    BINARY_EPS,
    LossWeights,
    airlight_reg,
    as_tensor,
    binary_mask_reg,
    exclusion_loss,
    reconstruction_loss,
    smoothness_reg,
    total_loss,
)


# --- independent scalar-loop oracles -------------------------------------


def mse_loop(a, b):
    total, n = 0.0, 0
    for idx in np.ndindex(a.shape):
        total += (a[idx] - b[idx]) ** 2
        n += 1
    return total / n


def downsample_loop(img):
    h, w, c = img.shape
    out = np.zeros((h // 2, w // 2, c))
    for i in range(h // 2):
        for j in range(w // 2):
            for k in range(c):
                out[i, j, k] = (
                    img[2 * i, 2 * j, k] + img[2 * i + 1, 2 * j, k] + img[2 * i, 2 * j + 1, k] + img[2 * i + 1, 2 * j + 1, k]
                ) / 4
    return out


def exclusion_loop(y1, y2, n_scales):
    """Direct evaluation of the exclusion formula with plain loops."""
    total = 0.0
    a, b = y1.astype(float), y2.astype(float)
    for level in range(n_scales):
        if level:
            a, b = downsample_loop(a), downsample_loop(b)
        h, w, c = a.shape
        for axis in ("x", "y"):
            ga, gb = [], []
            for i in range(h):
                for j in range(w):
                    for k in range(c):
                        if axis == "x" and j + 1 < w:
                            ga.append(abs(a[i, j + 1, k] - a[i, j, k]))
                            gb.append(abs(b[i, j + 1, k] - b[i, j, k]))
                        if axis == "y" and i + 1 < h:
                            ga.append(abs(a[i + 1, j, k] - a[i, j, k]))
                            gb.append(abs(b[i + 1, j, k] - b[i, j, k]))
            m1, m2 = sum(ga) / len(ga), sum(gb) / len(gb)
            lam1 = math.sqrt(m2 / m1) if m1 > 0 and m2 > 0 else 1.0
            lam2 = 1.0 / lam1
            total += sum(math.tanh(lam1 * p) * math.tanh(lam2 * q) for p, q in zip(ga, gb)) / len(ga)
    return total


def laplacian_loop(t):
    h, w = t.shape
    vals = []
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            vals.append(t[i - 1, j] + t[i + 1, j] + t[i, j - 1] + t[i, j + 1] - 4 * t[i, j])
    return np.array(vals)


# --- reconstruction -------------------------------------------------------


def test_reconstruction_identity():
    I = np.random.default_rng(0).uniform(size=(5, 5, 3))
    assert float(reconstruction_loss(I, I)) == 0.0


def test_reconstruction_constant_offset():
    assert float(reconstruction_loss(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.5))) == pytest.approx(0.25, abs=1e-15)


def test_reconstruction_matches_loop():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 3))
    assert float(reconstruction_loss(a, b)) == pytest.approx(mse_loop(a, b), abs=1e-12)


def test_reconstruction_l1_and_weights():
    a, b = np.zeros((2, 2, 1)), np.full((2, 2, 1), 0.5)
    assert float(reconstruction_loss(a, b, norm="l1")) == pytest.approx(0.5)
    w = np.array([[2.0, 0.0], [1.0, 1.0]])
    assert float(reconstruction_loss(a, b, weights=w)) == pytest.approx(0.25)


def test_reconstruction_shape_error():
    with pytest.raises(ShapeError):
        reconstruction_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


# --- exclusion ------------------------------------------------------------


def test_exclusion_constant_layer_is_zero():
    y1 = np.random.default_rng(2).uniform(size=(16, 16, 3))
    assert float(exclusion_loss(y1, np.full((16, 16, 3), 0.3))) == 0.0
    assert float(exclusion_loss(np.full((16, 16, 3), 0.3), y1)) == 0.0


def test_exclusion_identical_layers_positive():
    y = np.random.default_rng(3).uniform(size=(16, 16, 3))
    assert float(exclusion_loss(y, y)) > 0


def test_exclusion_matches_loop_single_scale():
    rng = np.random.default_rng(4)
    y1, y2 = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    assert float(exclusion_loss(y1, y2, n_scales=1)) == pytest.approx(exclusion_loop(y1, y2, 1), abs=1e-10)


def test_exclusion_matches_loop_three_scales():
    rng = np.random.default_rng(5)
    y1, y2 = rng.uniform(size=(16, 16, 2)), rng.uniform(size=(16, 16, 2))
    assert float(exclusion_loss(y1, y2, n_scales=3)) == pytest.approx(exclusion_loop(y1, y2, 3), abs=1e-10)


def test_exclusion_too_small_for_pyramid():
    y = np.zeros((6, 6, 1))
    exclusion_loss(y, y, n_scales=2)
    with pytest.raises(ConfigurationError):
        exclusion_loss(y, y, n_scales=3)


@settings(max_examples=25, deadline=None)
@given(
    arrays(np.float64, (8, 8, 3), elements=st.floats(0, 1)),
    arrays(np.float64, (8, 8, 3), elements=st.floats(0, 1)),
)
def test_exclusion_symmetric_and_nonnegative(y1, y2):
    a = float(exclusion_loss(y1, y2))
    b = float(exclusion_loss(y2, y1))
    assert a >= 0
    assert a == pytest.approx(b, abs=1e-12)


# --- binary mask regularizer ---------------------------------------------


def test_binary_reg_binary_mask():
    m = (np.random.default_rng(6).uniform(size=(10, 10)) > 0.5).astype(float)
    assert float(binary_mask_reg(m)) == pytest.approx(1 / (50 + BINARY_EPS), rel=1e-14)


def test_binary_reg_singular_case_is_finite():
    v = float(binary_mask_reg(np.full((3, 3), 0.5)))
    assert math.isfinite(v)
    assert v == pytest.approx(1 / BINARY_EPS)


def test_binary_reg_zero_mask():
    assert float(binary_mask_reg(np.zeros((2, 2)))) == pytest.approx(1 / (2 + BINARY_EPS), rel=1e-14)


def test_binary_reg_minimized_by_binary_masks():
    rng = np.random.default_rng(7)
    binary = (rng.uniform(size=(6, 6)) > 0.5).astype(float)
    floor = float(binary_mask_reg(binary))
    for _ in range(50):
        m = rng.uniform(size=(6, 6))
        assert float(binary_mask_reg(m)) > floor


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (4, 4), elements=st.floats(0, 1)),
    st.integers(0, 15),
    st.floats(0.01, 0.5),
)
def test_binary_reg_decreases_moving_away_from_half(m, flat, step):
    i, j = divmod(flat, 4)
    before = float(binary_mask_reg(m))
    moved = m.copy()
    target = 1.0 if m[i, j] >= 0.5 else 0.0
    moved[i, j] = m[i, j] + np.sign(target - m[i, j]) * min(step, abs(target - m[i, j]))
    if abs(moved[i, j] - m[i, j]) < 1e-9:
        return
    assert float(binary_mask_reg(moved)) < before


# --- smoothness -----------------------------------------------------------


def test_smoothness_constant_and_affine():
    assert float(smoothness_reg(np.full((6, 7), 0.4))) == 0.0
    y, x = np.mgrid[0:6, 0:7].astype(float)
    assert float(smoothness_reg(0.1 * x)) == pytest.approx(0.0, abs=1e-30)
    assert float(smoothness_reg(0.05 * x - 0.02 * y + 0.3)) == pytest.approx(0.0, abs=1e-28)


def test_smoothness_centered_impulse():
    t = np.zeros((5, 5))
    t[2, 2] = 1.0
    # interior 3x3: centre -4, four edge-neighbours +1, corners 0
    expected = (16 + 4 * 1) / 9
    assert float(smoothness_reg(t)) == pytest.approx(expected, abs=1e-15)
    assert float(smoothness_reg(t)) == pytest.approx(np.mean(laplacian_loop(t) ** 2), abs=1e-15)


def test_smoothness_random_matches_loop():
    t = np.random.default_rng(8).uniform(size=(7, 9))
    assert float(smoothness_reg(t)) == pytest.approx(np.mean(laplacian_loop(t) ** 2), abs=1e-12)


def test_smoothness_errors():
    with pytest.raises(ShapeError):
        smoothness_reg(np.zeros((2, 5)))
    with pytest.raises(ShapeError):
        smoothness_reg(np.zeros((5, 5, 3)))


# --- airlight -------------------------------------------------------------


def test_airlight_identity_and_offset():
    color = np.array([0.8, 0.7, 0.6])
    A = np.broadcast_to(color, (4, 4, 3))
    assert float(airlight_reg(A, color)) == 0.0
    assert float(airlight_reg(A + 0.1, color)) == pytest.approx(0.01, abs=1e-14)


def test_airlight_matches_loop():
    rng = np.random.default_rng(9)
    A = rng.uniform(size=(4, 4, 3))
    color = rng.uniform(size=3)
    assert float(airlight_reg(A, color)) == pytest.approx(mse_loop(A, np.broadcast_to(color, A.shape)), abs=1e-12)


# --- total loss -----------------------------------------------------------


def _unit(rng, shape=(8, 8)):
    y1 = rng.uniform(size=(*shape, 3))
    y2 = rng.uniform(size=(*shape, 3))
    m = rng.uniform(size=(*shape, 1))
    recon = m * y1 + (1 - m) * y2
    return {k: as_tensor(v) for k, v in dict(y1=y1, y2=y2, mask=m, reconstruction=recon).items()}


def test_total_zero_weights_is_reconstruction():
    rng = np.random.default_rng(10)
    unit = _unit(rng)
    I = rng.uniform(size=(8, 8, 3))
    r = total_loss(I, unit, LossWeights(0.0, 0.0), reg="binary")
    assert r.total == pytest.approx(r.reconst, abs=1e-15)


def test_total_perfect_binary_decomposition():
    rng = np.random.default_rng(11)
    y1, y2 = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    m = np.zeros((8, 8, 1))
    m[:, :4] = 1.0
    I = m * y1 + (1 - m) * y2
    unit = {k: as_tensor(v) for k, v in dict(y1=y1, y2=y2, mask=m, reconstruction=I).items()}
    w = LossWeights(alpha=0.3, beta=0.5)
    r = total_loss(I, unit, w, reg="binary")
    assert r.reconst == 0.0
    expected = 0.3 * float(exclusion_loss(y1, y2)) + 0.5 / (0.5 * 64 + BINARY_EPS)
    assert r.total == pytest.approx(expected, rel=1e-12)


def test_total_equals_termwise_sum():
    rng = np.random.default_rng(12)
    unit = _unit(rng)
    I = rng.uniform(size=(8, 8, 3))
    w = LossWeights(alpha=0.7, beta=0.2)
    r = total_loss(I, unit, w, reg="binary", n_scales=2)
    rec = mse_loop(I, unit["reconstruction"][0].permute(1, 2, 0).numpy())
    excl = exclusion_loop(unit["y1"][0].permute(1, 2, 0).numpy(), unit["y2"][0].permute(1, 2, 0).numpy(), 2)
    m = unit["mask"].numpy()
    reg = 1.0 / (np.abs(m - 0.5).sum() + BINARY_EPS)
    assert r.reconst == pytest.approx(rec, abs=1e-12)
    assert r.excl == pytest.approx(excl, abs=1e-10)
    assert r.reg == pytest.approx(reg, rel=1e-12)
    assert r.total == pytest.approx(rec + 0.7 * excl + 0.2 * reg, abs=1e-10)


def test_total_is_linear_in_alpha():
    rng = np.random.default_rng(13)
    unit = _unit(rng)
    I = rng.uniform(size=(8, 8, 3))
    r1 = total_loss(I, unit, LossWeights(alpha=0.2, beta=0.0))
    r2 = total_loss(I, unit, LossWeights(alpha=0.4, beta=0.0))
    assert (r2.total - r2.reconst) == pytest.approx(2 * (r1.total - r1.reconst), rel=1e-12)


def test_total_dehaze_regularizer_weights():
    rng = np.random.default_rng(14)
    unit = _unit(rng)
    color = np.array([0.9, 0.8, 0.7])
    unit["airlight_color"] = color
    I = rng.uniform(size=(8, 8, 3))
    w = LossWeights(alpha=0.0, beta=0.05, terms={"smoothness": 1.0, "airlight": 20.0})
    r = total_loss(I, unit, w, reg="dehaze")
    smooth = float(smoothness_reg(unit["mask"]))
    air = float(airlight_reg(unit["y2"], color))
    assert r.reg == pytest.approx(smooth + 20 * air, rel=1e-12)
    assert r.total == pytest.approx(r.reconst + 0.05 * smooth + 1.0 * air, rel=1e-12)


def test_total_unknown_regularizer():
    rng = np.random.default_rng(15)
    with pytest.raises(ConfigurationError):
        total_loss(rng.uniform(size=(8, 8, 3)), _unit(rng), LossWeights(), reg="sparsity")


def test_total_hint_term_adds_weighted_layer_errors():
    rng = np.random.default_rng(16)
    unit = _unit(rng)
    I = rng.uniform(size=(8, 8, 3))
    w1 = rng.uniform(size=(8, 8))
    w2 = rng.uniform(size=(8, 8))
    plain = total_loss(I, unit, LossWeights(0.0, 0.0))
    hinted = total_loss(I, unit, LossWeights(0.0, 0.0), hint_weights=(w1, w2, 0.5))
    y1 = unit["y1"][0].permute(1, 2, 0).numpy()
    y2 = unit["y2"][0].permute(1, 2, 0).numpy()
    extra = 0.5 * (np.mean(w1[..., None] * (I - y1) ** 2) + np.mean(w2[..., None] * (I - y2) ** 2))
    assert hinted.reconst == pytest.approx(plain.reconst + extra, abs=1e-12)


def test_weights_validation():
    with pytest.raises(ConfigurationError):
        LossWeights(alpha=-1.0)
    with pytest.raises(ConfigurationError):
        LossWeights(beta=float("nan"))


# --- gradients vs central finite differences -----------------------------


def _fd_check(fn, x, step=1e-4):
    x = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    fn(x).backward()
    analytic = x.grad.numpy().ravel()
    numeric = np.zeros_like(analytic)
    flat = x.detach().numpy().ravel()
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += step
        minus[i] -= step
        fp = float(fn(torch.tensor(plus.reshape(x.shape))))
        fm = float(fn(torch.tensor(minus.reshape(x.shape))))
        numeric[i] = (fp - fm) / (2 * step)
    err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-30)
    return err


GRAD_RNG = np.random.default_rng(2024)
X6 = GRAD_RNG.uniform(0.1, 0.9, size=(1, 3, 6, 6))
Y6 = GRAD_RNG.uniform(0.1, 0.9, size=(1, 3, 6, 6))
M6 = GRAD_RNG.uniform(0.05, 0.95, size=(1, 1, 6, 6))


@pytest.mark.parametrize(
    "name,fn,x",
    [
        ("reconstruction", lambda x: reconstruction_loss(torch.tensor(Y6), x), X6),
        ("reconstruction_l1", lambda x: reconstruction_loss(torch.tensor(Y6), x, norm="l1"), X6),
        ("exclusion_wrt_y1", lambda x: exclusion_loss(x, torch.tensor(Y6), n_scales=2), X6),
        ("exclusion_wrt_y2", lambda x: exclusion_loss(torch.tensor(X6), x, n_scales=2), Y6),
        ("binary", lambda x: binary_mask_reg(x), M6),
        ("smoothness", lambda x: smoothness_reg(x), M6),
        ("airlight", lambda x: airlight_reg(x, [0.8, 0.7, 0.6]), X6),
    ],
)
def test_gradients_match_finite_differences(name, fn, x):
    assert _fd_check(fn, x) < 1e-4

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from stargan import losses as L
from stargan.labels import LabelError, encode_unified

from conftest import RAFD

torch.set_default_dtype(torch.float32)
CFG = L.LossConfig()


def central_diff(f, x, h=1e-6):
    """Numerical gradient of scalar f at float64 tensor x."""
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        up = f(x).item()
        flat[i] = old - h
        down = f(x).item()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def autograd_grad(f, x):
    x = x.clone().requires_grad_(True)
    (g,) = torch.autograd.grad(f(x), x)
    return g


def assert_grad_matches(f, x, rtol=1e-4, atol=1e-8):
    num = central_diff(f, x.clone())
    ana = autograd_grad(f, x)
    torch.testing.assert_close(ana, num, rtol=rtol, atol=atol)


# ---------------------------------------------------------------- values

def test_gan_uniform_half():
    p = torch.full((4, 1, 2, 2), 0.5)
    assert abs(L.adv_loss_gan(p, p).item() - (-1.3863)) < 1e-4
    assert abs(L.adv_loss_gan(p, p).item() - 2 * math.log(0.5)) < 1e-6


def test_gan_perfect_limit_and_range_check():
    vals = [L.adv_loss_gan(torch.full((2,), 1 - e), torch.full((2,), e)).item() for e in (1e-2, 1e-4, 1e-6)]
    assert all(v < 0 for v in vals) and vals[0] < vals[1] < vals[2]
    assert vals[-1] > -1e-5
    for bad in (0.0, 1.0, 1.5, -0.2):
        with pytest.raises(ValueError):
            L.adv_loss_gan(torch.tensor([bad]), torch.tensor([0.5]))


def test_gan_mixed_patch_mean():
    real = torch.rand(3, 1, 2, 2) * 0.9 + 0.05
    fake = torch.rand(3, 1, 2, 2) * 0.9 + 0.05
    per_patch = torch.log(real) + torch.log(1 - fake)
    assert torch.allclose(L.adv_loss_gan(real, fake), per_patch.mean())
    perm = torch.randperm(3)
    assert torch.allclose(L.adv_loss_gan(real[perm], fake[perm]), L.adv_loss_gan(real, fake))


@pytest.mark.parametrize("d_real,d_fake,norm,expected", [
    (1.0, 0.0, 1.0, 1.0),
    (0.0, 0.0, 2.0, -10.0),
    (0.0, 0.0, 0.0, -10.0),
])
def test_wgan_gp_examples(d_real, d_fake, norm, expected):
    v = L.adv_loss_wgan_gp(torch.full((4,), d_real), torch.full((4,), d_fake), torch.full((4,), norm), CFG)
    assert v.item() == pytest.approx(expected, abs=1e-7)


def test_wgan_linear_in_mean_scores():
    a, b = torch.randn(6), torch.randn(6)
    n = torch.ones(6)
    assert L.adv_loss_wgan_gp(a, b, n, CFG).item() == pytest.approx((a.mean() - b.mean()).item(), abs=1e-6)


def test_interpolate_endpoints():
    real, fake = torch.ones(3, 2, 4, 4), torch.zeros(3, 2, 4, 4)
    assert torch.equal(L.interpolate(real, fake, eps=torch.ones(3))[0], real)
    assert torch.equal(L.interpolate(real, fake, eps=torch.zeros(3))[0], fake)
    assert torch.equal(L.interpolate(real, fake, eps=torch.full((3,), 0.5))[0], torch.full_like(real, 0.5))
    x_hat, eps = L.interpolate(real, fake, torch.Generator().manual_seed(0))
    for i in range(3):  # one eps per sample
        assert torch.allclose(x_hat[i], torch.full_like(x_hat[i], eps[i].item()))
    with pytest.raises(ValueError):
        L.interpolate(real, fake[:2])


def test_gp_linear_critic():
    torch.manual_seed(0)
    w = torch.randn(3, 5, 5, dtype=torch.float64)
    critic = lambda x: (x * w).flatten(1).sum(1)
    x_hat = torch.randn(4, 3, 5, 5, dtype=torch.float64)
    norms = L.gradient_norms(critic, x_hat)
    assert torch.allclose(norms, torch.full((4,), w.norm().item(), dtype=torch.float64))
    expected = 10 * (w.norm().item() - 1) ** 2
    assert abs(CFG.lambda_gp * L.gp_term(norms).item() - expected) < 1e-6


def test_cls_categorical_examples(rafd_universe):
    labels = [encode_unified(RAFD.one_hot(n), 0, rafd_universe) for n in ("happy", "sad")]
    assert L.cls_loss(torch.zeros(2, 8), labels, rafd_universe).item() == pytest.approx(math.log(8), abs=1e-6)
    assert abs(math.log(8) - 2.0794) < 1e-4
    perfect = torch.full((2, 8), -1e4)
    perfect[0, 4] = perfect[1, 6] = 1e4
    assert L.cls_loss(perfect, labels, rafd_universe).item() == pytest.approx(0.0, abs=1e-6)


def test_cls_binary_perfect_and_out_of_slice(joint_universe):
    label = np.array([1, 0, 0, 1, 1], np.float32)
    labels = [encode_unified(label, 0, joint_universe)] * 2
    logits = torch.zeros(2, 13)
    logits[:, :5] = torch.from_numpy(label * 2e3 - 1e3)
    base = L.cls_loss(logits, labels, joint_universe).item()
    assert base == pytest.approx(0.0, abs=1e-6)
    logits[:, 5:] = torch.randn(2, 8) * 100
    assert L.cls_loss(logits, labels, joint_universe).item() == base


def test_cls_accepts_tensor_labels_and_rejects_mixed(joint_universe):
    a = encode_unified([1, 0, 0, 1, 1], 0, joint_universe)
    b = encode_unified(RAFD.one_hot("sad"), 1, joint_universe)
    logits = torch.randn(2, 13)
    t = torch.from_numpy(np.stack([a.values, a.values]))
    assert torch.equal(L.cls_loss(logits, [a, a], joint_universe), L.cls_loss(logits, t, joint_universe))
    with pytest.raises(LabelError):
        L.cls_loss(logits, [a, b], joint_universe)
    with pytest.raises(LabelError):
        L.cls_loss(logits, torch.from_numpy(np.stack([a.values, b.values])), joint_universe)
    with pytest.raises(ValueError):
        L.cls_loss(torch.randn(2, 12), [a, a], joint_universe)


def test_rec_examples():
    x = torch.randn(2, 3, 4, 4)
    assert L.rec_loss(x, x).item() == 0
    assert L.rec_loss(x, x + 0.5).item() == pytest.approx(0.5, abs=1e-6)
    alt = torch.ones(2, 3, 4, 4)
    alt.view(-1)[::2] = -1
    assert L.rec_loss(torch.zeros_like(alt), alt).item() == 1.0
    with pytest.raises(ValueError):
        L.rec_loss(x, x[:1])


@given(st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_rec_metric_like(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(2, 3, 3, 3, generator=g), torch.randn(2, 3, 3, 3, generator=g)
    assert L.rec_loss(a, b).item() >= 0
    assert L.rec_loss(a, b).item() == L.rec_loss(b, a).item()
    assert L.rec_loss(a, a).item() == 0 and L.rec_loss(a, b).item() > 0


def test_assembly():
    d = L.total_d_loss(1.0, 2.0, 0.0, CFG)
    assert d.total == 1.0
    g = L.total_g_loss(1.0, 2.0, 0.3, CFG)
    assert g.total == pytest.approx(6.0)
    assert L.total_d_loss(0.0, 0.0, 0.0, CFG).total == 0.0
    assert L.total_g_loss(0.0, 0.0, 0.0, CFG).total == 0.0
    # the penalty enters L_D with weight lambda_gp
    assert L.total_d_loss(0.0, 0.0, 0.5, CFG).total == 5.0
    assert (CFG.lambda_cls, CFG.lambda_rec, CFG.lambda_gp) == (1.0, 10.0, 10.0)


def test_config_validation():
    with pytest.raises(ValueError):
        L.LossConfig(lambda_rec=-1)
    with pytest.raises(ValueError):
        L.LossConfig(adv_variant="hinge")


def test_breakdown_detached_is_plain_floats():
    x = torch.tensor(2.0, requires_grad=True)
    parts = L.total_g_loss(x * 1, x * 2, x * 3, CFG).detached()
    assert parts.total == pytest.approx(2 + 4 + 60)
    assert all(isinstance(getattr(parts, f), float) for f in ("adv", "cls", "rec", "gp", "total"))


# ---------------------------------------------------------------- gradients

D64 = torch.float64


def test_grad_gan():
    g = torch.Generator().manual_seed(0)
    real = torch.rand(3, 1, 2, 2, generator=g, dtype=D64) * 0.8 + 0.1
    fake = torch.rand(3, 1, 2, 2, generator=g, dtype=D64) * 0.8 + 0.1
    assert_grad_matches(lambda r: L.adv_loss_gan(r, fake), real)
    assert_grad_matches(lambda f: L.adv_loss_gan(real, f), fake)


def test_grad_wgan_gp():
    g = torch.Generator().manual_seed(1)
    real, fake = torch.randn(4, generator=g, dtype=D64), torch.randn(4, generator=g, dtype=D64)
    norms = torch.rand(4, generator=g, dtype=D64) * 3
    assert_grad_matches(lambda n: L.adv_loss_wgan_gp(real, fake, n, CFG), norms)
    assert_grad_matches(lambda r: L.adv_loss_wgan_gp(r, fake, norms, CFG), real)


def test_grad_cls_both_kinds(joint_universe):
    g = torch.Generator().manual_seed(2)
    a = [encode_unified([1, 0, 1, 0, 1], 0, joint_universe), encode_unified([0, 1, 0, 1, 0], 0, joint_universe)]
    b = [encode_unified(RAFD.one_hot(n), 1, joint_universe) for n in ("happy", "angry")]
    logits = torch.randn(2, 13, generator=g, dtype=D64)
    assert_grad_matches(lambda z: L.cls_loss(z, a, joint_universe), logits)
    assert_grad_matches(lambda z: L.cls_loss(z, b, joint_universe), logits)


def test_grad_rec():
    g = torch.Generator().manual_seed(3)
    x = torch.randn(2, 3, 3, 3, generator=g, dtype=D64)
    y = x + torch.randn(2, 3, 3, 3, generator=g, dtype=D64).sign() * (0.2 + torch.rand(2, 3, 3, 3, generator=g,
                                                                                        dtype=D64))
    assert_grad_matches(lambda t: L.rec_loss(x, t), y)


class SmoothCritic(torch.nn.Module):
    """Tiny nonlinear critic with smooth activations so finite differences are well-behaved."""

    def __init__(self):
        super().__init__()
        g = torch.Generator().manual_seed(4)
        self.conv = torch.nn.Conv2d(3, 4, 3, 1, 1).double()
        with torch.no_grad():
            self.conv.weight.copy_(torch.randn(self.conv.weight.shape, generator=g, dtype=D64) * 0.3)
        self.w = torch.nn.Parameter(torch.randn(4, generator=g, dtype=D64))

    def forward(self, x):
        return (torch.tanh(self.conv(x)).mean((2, 3)) * self.w).sum(1)


def test_grad_gp_wrt_interpolates_and_endpoints():
    critic = SmoothCritic()
    g = torch.Generator().manual_seed(5)
    real = torch.randn(3, 3, 4, 4, generator=g, dtype=D64)
    fake = torch.randn(3, 3, 4, 4, generator=g, dtype=D64)
    eps = torch.rand(3, generator=g, dtype=D64)

    def gp_of_xhat(x_hat):
        return CFG.lambda_gp * L.gp_term(L.gradient_norms(critic, x_hat))

    x_hat, _ = L.interpolate(real, fake, eps=eps)
    assert_grad_matches(gp_of_xhat, x_hat.detach())
    assert_grad_matches(lambda r: gp_of_xhat(L.interpolate(r, fake, eps=eps)[0]), real)


def test_grad_gp_wrt_critic_parameter():
    critic = SmoothCritic()
    x_hat = torch.randn(3, 3, 4, 4, generator=torch.Generator().manual_seed(6), dtype=D64)

    w0 = critic.w.detach().clone()
    num = central_diff(lambda w: (critic.w.data.copy_(w), L.gp_term(L.gradient_norms(critic, x_hat)))[1],
                       w0.clone())
    critic.w.data.copy_(w0)
    (ana,) = torch.autograd.grad(L.gp_term(L.gradient_norms(critic, x_hat)), critic.w)
    torch.testing.assert_close(ana, num, rtol=1e-4, atol=1e-8)


def test_out_of_slice_gradient_zero(joint_universe):
    for origin, labels in ((0, [encode_unified([1, 0, 0, 1, 1], 0, joint_universe)] * 3),
                           (1, [encode_unified(RAFD.one_hot(n), 1, joint_universe)
                                for n in ("happy", "sad", "fearful")])):
        logits = torch.randn(3, 13, dtype=D64)
        num = central_diff(lambda z: L.cls_loss(z, labels, joint_universe), logits.clone())
        ana = autograd_grad(lambda z: L.cls_loss(z, labels, joint_universe), logits)
        outside = torch.ones(13, dtype=torch.bool)
        outside[joint_universe.slice_of(origin)] = False
        assert torch.count_nonzero(num[:, outside]) == 0
        assert torch.count_nonzero(ana[:, outside]) == 0
        assert torch.count_nonzero(ana[:, ~outside]) > 0

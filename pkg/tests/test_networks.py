import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from stargan.netspec import infer_shapes_and_params, stargan_discriminator_spec, stargan_generator_spec
from stargan.networks import Discriminator, Generator, count_parameters, materialize


@pytest.fixture(scope="module")
def paper_nets():
    g_spec, d_spec = stargan_generator_spec(8), stargan_discriminator_spec(128, 128, 8)
    return g_spec, d_spec, materialize(g_spec, 0), materialize(d_spec, 1)


def test_paper_materialized_counts(paper_nets):
    g_spec, d_spec, G, D = paper_nets
    assert count_parameters(G) == infer_shapes_and_params(g_spec, 128, 128).total_params
    assert count_parameters(D) == infer_shapes_and_params(d_spec, 128, 128).total_params


def test_paper_shapes(paper_nets):
    _, _, G, D = paper_nets
    x = torch.randn(1, 3, 128, 128)
    c = torch.zeros(1, 8)
    c[0, 2] = 1
    with torch.no_grad():
        y = G(x, c)
        src, cls = D(x)
    assert y.shape == (1, 3, 128, 128)
    assert src.shape == (1, 1, 2, 2)
    assert cls.shape == (1, 8)


def test_generator_range_and_replicated_label():
    spec = stargan_generator_spec(4, 0.125, 1)
    G = materialize(spec, 0)
    x = torch.randn(2, 3, 16, 16) * 50
    c = torch.rand(2, 4)
    with torch.no_grad():
        y = G(x, c)
        y2 = G(x, c[:, :, None, None].expand(-1, -1, 16, 16))
    assert y.abs().max() <= 1.0
    assert torch.equal(y, y2)


def test_seed_determinism():
    spec = stargan_discriminator_spec(16, 16, 3, 0.25)
    a, b, c = materialize(spec, 5), materialize(spec, 5), materialize(spec, 6)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_materialize_types():
    assert isinstance(materialize(stargan_generator_spec(3, 0.125, 0), 0), Generator)
    assert isinstance(materialize(stargan_discriminator_spec(16, 16, 3, 0.125), 0), Discriminator)


@given(st.sampled_from([0.125, 0.25, 0.375, 0.5]), st.integers(0, 3), st.sampled_from([8, 16, 32]),
       st.integers(1, 6))
@settings(max_examples=25, deadline=None)
def test_counts_equal_for_random_configs(width, n_res, size, n_c):
    g_spec = stargan_generator_spec(n_c, width, n_res)
    d_spec = stargan_discriminator_spec(size, size, n_c, width)
    G, D = materialize(g_spec, 0), materialize(d_spec, 0)
    assert count_parameters(G) == infer_shapes_and_params(g_spec, size, size).total_params
    assert count_parameters(D) == infer_shapes_and_params(d_spec, size, size).total_params
    with torch.no_grad():
        y = G(torch.randn(1, 3, size, size), torch.rand(1, n_c))
        src, cls = D(y)
    assert y.shape == (1, 3, size, size) and y.abs().max() <= 1
    exp = infer_shapes_and_params(d_spec, size, size)
    assert tuple(src.shape[2:]) == exp.output("src")[:2]
    assert cls.shape == (1, n_c)

import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from stargan.data import SyntheticSpec, denormalize, make_synthetic
from stargan.evaluate import (ClassifierConfig, EvalReport, classification_error_of_translations, emit_grid,
                              label_accuracy, mask_probe, param_report, train_eval_classifier)
from stargan.labels import LabelUniverse, encode_unified
from stargan.netspec import PAPER_PARAMS, stargan_discriminator_spec, stargan_generator_spec
from stargan.networks import count_parameters, materialize


class Identity(torch.nn.Module):
    def forward(self, x, c):
        return x


def untrained_g(universe, seed=0):
    return materialize(stargan_generator_spec(universe.unified_dim, 0.125, 1), seed)


def test_untrained_generator_near_chance(hue_corpus):
    _, test, oracle = hue_corpus
    u = LabelUniverse((test.spec,))
    g = untrained_g(u)
    rep = classification_error_of_translations(g, test, u, 0, oracle)
    assert abs(rep.classification_error - 2 / 3) < 0.1

    class Blind(torch.nn.Module):
        def forward(self, x, c):
            return g(x, torch.zeros_like(c))

    # an output that ignores the target matches exactly one of the three targets per image
    blind = classification_error_of_translations(Blind(), test, u, 0, oracle)
    assert blind.classification_error == pytest.approx(2 / 3)
    assert rep.n_images == 3 * len(test) and len(rep.per_domain_errors) == 3
    assert rep.domain_names == ["red", "green", "blue"]


def test_identity_generator_matches_base_error(hue_corpus):
    train, test, _ = hue_corpus
    u = LabelUniverse((test.spec,))
    clf, _, _ = train_eval_classifier(train, train.spec, ClassifierConfig(epochs=1, seed=0))
    wrong, total = 0.0, 0
    for k in range(3):
        idx = np.flatnonzero(test.labels[:, k] == 1)
        rep = classification_error_of_translations(Identity(), test.subset(idx), u, 0, clf,
                                                   targets=[np.eye(3, dtype=np.float32)[k]])
        wrong += rep.classification_error * len(idx)
        total += len(idx)
    base = 1 - label_accuracy(clf, test.images, test.labels)
    assert wrong / total == pytest.approx(base)


@given(st.permutations(list(range(24))))
@settings(max_examples=10, deadline=None)
def test_error_invariant_to_order(perm):
    _, test, oracle = make_synthetic(SyntheticSpec(n_per_domain=1, test_per_domain=8, seed=3))
    u = LabelUniverse((test.spec,))
    g = untrained_g(u, 1)
    a = classification_error_of_translations(g, test, u, 0, oracle)
    b = classification_error_of_translations(g, test.subset(perm), u, 0, oracle)
    assert a.per_domain_errors == b.per_domain_errors


def test_empty_test_set_rejected(hue_corpus):
    _, test, oracle = hue_corpus
    u = LabelUniverse((test.spec,))
    with pytest.raises(ValueError, match="empty"):
        classification_error_of_translations(untrained_g(u), test.subset([]), u, 0, oracle)


def test_oracle_classifier_path(hue_corpus):
    train, _, oracle = hue_corpus
    clf, acc, trusted = train_eval_classifier(train, train.spec, oracle=oracle)
    assert clf is oracle and acc == 1.0 and trusted


def test_degenerate_dataset_rejected(hue_corpus):
    train = hue_corpus[0]
    one = train.subset(np.flatnonzero(train.labels[:, 0] == 1))
    with pytest.raises(ValueError, match="two domains"):
        train_eval_classifier(one, train.spec)


def test_cnn_on_noisy_corpus():
    train, _, _ = make_synthetic(SyntheticSpec(n_per_domain=100, test_per_domain=0, noise=0.1, seed=5))
    _, acc, trusted = train_eval_classifier(train, train.spec, ClassifierConfig(seed=0))
    assert acc >= 0.97 and trusted


def test_low_accuracy_is_untrusted(hue_corpus, caplog):
    train = hue_corpus[0]
    _, acc, trusted = train_eval_classifier(train, train.spec, ClassifierConfig(epochs=0, accuracy_floor=1.01))
    assert not trusted and "untrusted" in caplog.text


def test_param_report():
    g, d = stargan_generator_spec(8), stargan_discriminator_spec(128, 128, 8)
    rep = param_report(g, d, 128, 128)
    assert rep["params_total"] == 53_230_284
    assert abs(rep["relative_diff"]) < 0.01 and rep["reference"] == PAPER_PARAMS
    half = param_report(stargan_generator_spec(8, 0.5), stargan_discriminator_spec(128, 128, 8, 0.5), 128, 128)
    assert half["params_total"] < rep["params_total"]
    gs, ds = stargan_generator_spec(3, 0.25, 2), stargan_discriminator_spec(16, 16, 3, 0.25)
    small = param_report(gs, ds, 16, 16)
    assert small["params_generator"] == count_parameters(materialize(gs, 0))
    assert small["params_discriminator"] == count_parameters(materialize(ds, 0))


def test_grid_layout_and_decode(hue_corpus, tmp_path):
    _, test, _ = hue_corpus
    u = LabelUniverse((test.spec,))
    g = untrained_g(u)
    inputs = test.images[:4]
    targets = [encode_unified(np.eye(3)[k % 3], 0, u).values for k in range(5)]
    arr = emit_grid(g, inputs, targets, tmp_path / "grid.png")
    assert arr.shape == (4 * 16, 6 * 16, 3) and arr.dtype == np.uint8
    decoded = np.asarray(Image.open(tmp_path / "grid.png"))
    assert np.array_equal(decoded, arr)
    with torch.no_grad():
        out = g(torch.from_numpy(inputs).permute(0, 3, 1, 2), torch.from_numpy(targets[1]).expand(4, -1))
    expected = denormalize(out.permute(0, 2, 3, 1))
    col = decoded[:, 2 * 16:3 * 16].reshape(4, 16, 16, 3)
    assert np.abs(col.astype(int) - expected.astype(int)).max() <= 1
    back = col.astype(np.float32) / 127.5 - 1
    assert np.abs(back - out.permute(0, 2, 3, 1).numpy()).max() <= 1 / 255 + 1e-6


def test_identity_grid_columns_equal(hue_corpus, tmp_path):
    _, test, _ = hue_corpus
    u = LabelUniverse((test.spec,))
    arr = emit_grid(Identity(), test.images[:3], [encode_unified(np.eye(3)[k], 0, u).values for k in range(3)],
                    tmp_path / "g.png")
    cols = np.split(arr, 4, axis=1)
    assert all(np.array_equal(c, cols[0]) for c in cols[1:])


def test_grid_io_error_names_path(hue_corpus, tmp_path):
    _, test, _ = hue_corpus
    u = LabelUniverse((test.spec,))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_grid(Identity(), test.images[:1], [encode_unified(np.eye(3)[0], 0, u).values], blocker / "g.png")


def test_mask_probe_untrained_and_rejection(hue_corpus, attrs_corpus, tmp_path):
    _, hue_test, hue_oracle = hue_corpus
    attrs_test = attrs_corpus[1]
    joint = LabelUniverse((attrs_test.spec, hue_test.spec))
    g = untrained_g(joint)
    res = mask_probe(g, joint, hue_test.images, 1, hue_oracle, tmp_path / "probe.png")
    assert res["chance_error"] == pytest.approx(2 / 3)
    assert abs(res["proper_error"] - 2 / 3) < 0.1 and abs(res["wrong_error"] - 2 / 3) < 0.1
    assert res["wrong_mask"] == [1.0, 0.0] and res["proper_mask"] == [0.0, 1.0]
    assert (tmp_path / "probe_proper.png").exists() and (tmp_path / "probe_wrong.png").exists()
    single = LabelUniverse((hue_test.spec,))
    with pytest.raises(ValueError, match="jointly"):
        mask_probe(untrained_g(single), single, hue_test.images, 0, hue_oracle)


def test_report_serialisation(tmp_path):
    rep = EvalReport(classification_error=0.1, per_domain_errors=[0.0, 0.3], per_domain_counts=[10, 10],
                     domain_names=["a", "b"], n_images=20, params_total=53_230_284)
    rep.save(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["uniform_mean_error"] == pytest.approx(0.15)
    md = rep.markdown()
    assert "10.00%" in md and "53.2M" in md

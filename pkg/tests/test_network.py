"""Gated mixture-of-experts: blending algebra, gradients, training,
and checkpointing."""

import numpy as np
import pytest
import torch

from inbetween import features, network, synth
from tests.test_features import dummy_phase


def tiny_config(**kw):
    base = dict(input_width=20, output_width=12, gating_width=10,
                experts=4, hidden=16, gating_hidden=8, dropout=0.0)
    base.update(kw)
    return network.MoEConfig(**base)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return network.InBetweenNetwork(tiny_config())


class TestGating:
    def test_outputs_lie_on_the_simplex(self, tiny_model, rng):
        ph = rng.normal(size=(40, 10))
        w = network.gate(tiny_model, ph)
        assert w.shape == (40, 4)
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)

    def test_single_vector_input(self, tiny_model, rng):
        w = network.gate(tiny_model, rng.normal(size=10))
        assert w.shape == (4,)


class TestBlending:
    def test_one_hot_reproduces_single_expert_exactly(self, tiny_model, rng):
        # with a one-hot gate the blended parameters, and therefore the
        # output, must be bit-identical to running the selected expert alone
        x = rng.normal(size=(3, 20))
        for k in range(4):
            omega = np.zeros((3, 4))
            omega[:, k] = 1.0
            om = torch.as_tensor(omega, dtype=torch.float32)
            for layer in range(3):
                w, b = tiny_model.experts.blended_layer(layer, om)
                want_w = tiny_model.experts.weights[layer][k]
                want_b = tiny_model.experts.biases[layer][k]
                for row in range(3):
                    assert torch.equal(w[row], want_w)
                    assert torch.equal(b[row], want_b)
            got = network.blend_and_predict(tiny_model, x, omega)
            want = _single_expert_forward(tiny_model, x, k)
            np.testing.assert_array_equal(got, want.astype(got.dtype))

    def test_identical_experts_ignore_the_gate(self, tiny_model, rng):
        # copy expert 0 into all slots: any gate on the simplex must give
        # the same output
        with torch.no_grad():
            for layer in range(3):
                w = tiny_model.experts.weights[layer]
                b = tiny_model.experts.biases[layer]
                w.copy_(w[0:1].expand_as(w))
                b.copy_(b[0:1].expand_as(b))
        x = rng.normal(size=(4, 20))
        outs = [network.blend_and_predict(tiny_model, x, rng.dirichlet(np.ones(4), size=4))
                for _ in range(5)]
        for o in outs[1:]:
            np.testing.assert_allclose(o, outs[0], atol=1e-6)

    def test_blend_is_affine_in_weights(self, tiny_model, rng):
        # blended params under weights w equal sum_k w_k * params_k
        omega = rng.dirichlet(np.ones(4), size=5)
        om = torch.as_tensor(omega, dtype=torch.float32)
        for layer in range(3):
            w, b = tiny_model.experts.blended_layer(layer, om)
            wk = tiny_model.experts.weights[layer].detach().numpy()
            bk = tiny_model.experts.biases[layer].detach().numpy()
            want_w = np.einsum("bk,koi->boi", omega, wk)
            want_b = np.einsum("bk,ko->bo", omega, bk)
            np.testing.assert_allclose(w.detach().numpy(), want_w, atol=1e-6)
            np.testing.assert_allclose(b.detach().numpy(), want_b, atol=1e-6)

    def test_forward_matches_numpy_oracle(self, tiny_model, rng):
        # independent elu + matmul re-implementation
        x = rng.normal(size=(6, 20))
        omega = rng.dirichlet(np.ones(4), size=6)
        got = network.blend_and_predict(tiny_model, x, omega)

        def elu(v):
            return np.where(v > 0, v, np.expm1(v))

        h = x.copy()
        for layer in range(3):
            wk = tiny_model.experts.weights[layer].detach().numpy().astype(np.float64)
            bk = tiny_model.experts.biases[layer].detach().numpy().astype(np.float64)
            w = np.einsum("bk,koi->boi", omega, wk)
            b = np.einsum("bk,ko->bo", omega, bk)
            h = np.einsum("boi,bi->bo", w, h) + b
            if layer < 2:
                h = elu(h)
        np.testing.assert_allclose(got, h, atol=1e-4)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(1)
        model = network.InBetweenNetwork(tiny_config(hidden=6, experts=2,
                                                     input_width=5, output_width=3,
                                                     gating_width=4, gating_hidden=4))
        model.double()
        x = torch.randn(2, 5, dtype=torch.float64)
        ph = torch.randn(2, 4, dtype=torch.float64)
        tgt = torch.randn(2, 3, dtype=torch.float64)

        def loss_fn():
            return torch.mean((model(x, ph) - tgt) ** 2)

        loss = loss_fn()
        loss.backward()
        for name, p in list(model.named_parameters())[:4]:
            flat = p.detach().reshape(-1)
            grad = p.grad.reshape(-1)
            for idx in (0, len(flat) // 2):
                eps = 1e-6
                with torch.no_grad():
                    flat[idx] += eps
                    up = float(loss_fn())
                    flat[idx] -= 2 * eps
                    down = float(loss_fn())
                    flat[idx] += eps
                fd = (up - down) / (2 * eps)
                assert abs(fd - float(grad[idx])) < 1e-4, f"{name}[{idx}]"


def _single_expert_forward(model, x, k):
    """Expert k alone, run through the batched-matmul path the bank uses
    (different matmul kernels round differently, so a bit-exact comparison
    must go through the same kernel)."""
    with torch.no_grad():
        h = torch.as_tensor(x, dtype=torch.float32)
        n = h.shape[0]
        for layer in range(3):
            w = model.experts.weights[layer][k].expand(n, -1, -1)
            b = model.experts.biases[layer][k]
            h = torch.bmm(w, h[..., None])[..., 0] + b
            if layer < 2:
                h = torch.nn.functional.elu(h)
    return h.numpy()


@pytest.fixture(scope="module")
def small_dataset():
    clip = synth.make_walk_clip(n_frames=120)
    p, f, a = dummy_phase(clip.frame_count)
    feats = features.assemble_features(clip, p, f, a)
    return features.build_dataset([feats], rng=np.random.default_rng(11))


class TestTraining:
    def test_loss_decreases(self, small_dataset):
        cfg = network.MoEConfig(
            input_width=588, output_width=757, gating_width=130,
            experts=2, hidden=64, gating_hidden=16, dropout=0.0, lr=1e-3, epochs=8,
        )
        _, hist = network.train(small_dataset, cfg, validation_fraction=0.0)
        assert hist["train_loss"][-1] < hist["train_loss"][0] * 0.5

    def test_deterministic_given_seed(self, small_dataset):
        cfg = dict(input_width=588, output_width=757, gating_width=130,
                   experts=2, hidden=32, gating_hidden=8, dropout=0.0,
                   lr=1e-3, epochs=2, seed=9)
        _, h1 = network.train(small_dataset, network.MoEConfig(**cfg))
        _, h2 = network.train(small_dataset, network.MoEConfig(**cfg))
        assert h1["train_loss"] == h2["train_loss"]

    def test_memorizes_a_few_rows(self):
        # a tiny regression problem the network must drive below 1e-4
        rng = np.random.default_rng(0)
        x = np.zeros((8, 718))
        x[:, :16] = rng.normal(size=(8, 16))
        lay_x = features.input_layout(22)
        x[:, lay_x.slice("phase")] = rng.normal(size=(8, 130))
        y = np.zeros((8, 757))
        y[:, :8] = np.eye(8)
        ds = features.Dataset(
            x=x, y=y, x_layout=lay_x, y_layout=features.output_layout(22),
            x_mean=np.zeros(718), x_std=np.ones(718),
            y_mean=np.zeros(757), y_std=np.ones(757),
        )
        cfg = network.MoEConfig(input_width=588, output_width=757, gating_width=130,
                                experts=2, hidden=64, gating_hidden=16,
                                dropout=0.0, lr=1e-3, epochs=300, batch_size=8,
                                warm_restart_period=300)
        pred, hist = network.train(ds, cfg, validation_fraction=0.0)
        out = pred.predict(x)
        assert np.mean((out - y) ** 2) < 1e-4

    def test_predict_enforces_width_contract(self, small_dataset):
        cfg = network.MoEConfig(input_width=588, output_width=757, gating_width=130,
                                experts=2, hidden=16, gating_hidden=8, epochs=1)
        pred, _ = network.train(small_dataset, cfg)
        with pytest.raises(ValueError, match="width"):
            pred.predict(np.zeros(10))


class TestCheckpoint:
    def test_save_load_identical_predictions(self, tmp_path, small_dataset):
        cfg = network.MoEConfig(input_width=588, output_width=757, gating_width=130,
                                experts=2, hidden=16, gating_hidden=8, epochs=1)
        pred, _ = network.train(small_dataset, cfg)
        network.save_checkpoint(pred, tmp_path / "model.pt")
        back = network.load_checkpoint(tmp_path / "model.pt")
        x = small_dataset.x[:5]
        np.testing.assert_array_equal(pred.predict(x), back.predict(x))
        assert back.meta == pred.meta

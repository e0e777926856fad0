"""Future-geometry head and its supervision loss."""

import pytest
import torch
import torch.nn.functional as F

from stemvla.config import ModelConfig
from stemvla.fsgwp import (FutureGeometryHead, FutureGeometryPrediction,
                           ShapeError, fsgwp_loss, predict_future_geometry)
from stemvla.model import execution_plan

CFG = ModelConfig()


@pytest.fixture(scope="module")
def head():
    torch.manual_seed(0)
    return FutureGeometryHead(CFG)


def rand_w(seed=0, b=1):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(b, CFG.n_queries, CFG.d_model, generator=g)


class TestHead:
    def test_output_shape_and_range(self, head):
        d = head(rand_w())
        assert d.shape == (1, 32, 32)
        assert (d >= 0).all() and torch.isfinite(d).all()

    def test_zero_final_layer_constant_map(self):
        torch.manual_seed(1)
        h = FutureGeometryHead(CFG)
        with torch.no_grad():
            h.out.weight.zero_()
            h.out.bias.fill_(0.7)
        d = h(rand_w(1))
        assert torch.allclose(d, F.softplus(torch.tensor(0.7)).expand_as(d))

    def test_prediction_wrapper(self, head):
        pred = predict_future_geometry(rand_w(2)[0], head, horizon=8)
        assert isinstance(pred, FutureGeometryPrediction)
        assert pred.d_hat.shape == (32, 32)
        assert pred.horizon == 8

    def test_negative_prediction_rejected(self):
        with pytest.raises(AssertionError):
            FutureGeometryPrediction(d_hat=torch.full((4, 4), -1.0), horizon=8)

    def test_latent_variant_shape(self, head):
        out = head.forward_latents(rand_w(3, b=2))
        assert out.shape == (2, 16, CFG.d_geom)


class TestLoss:
    def test_zero_on_equal(self):
        d = torch.rand(8, 8)
        assert fsgwp_loss(d, d) == 0

    def test_constant_offset_is_exactly_one(self):
        d = torch.rand(32, 32, dtype=torch.float64)
        assert fsgwp_loss(d + 1.0, d).item() == pytest.approx(1.0, abs=1e-12)

    def test_brute_force_reference(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(10):
            a = torch.rand(4, 4, dtype=torch.float64, generator=g)
            b = torch.rand(4, 4, dtype=torch.float64, generator=g)
            ref = sum((a[i, j] - b[i, j]) ** 2
                      for i in range(4) for j in range(4)) / 16
            assert abs(fsgwp_loss(a, b).item() - ref.item()) <= 1e-12 * ref.item()

    def test_symmetric(self):
        a, b = torch.rand(6, 6), torch.rand(6, 6)
        assert torch.equal(fsgwp_loss(a, b), fsgwp_loss(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fsgwp_loss(torch.zeros(4, 4), torch.zeros(4, 5))

    def test_nonfinite_rejected(self):
        bad = torch.tensor([[float("nan")]])
        with pytest.raises(ValueError):
            fsgwp_loss(bad, torch.zeros(1, 1))


class TestSkipGuard:
    def test_execution_plan(self):
        train = execution_plan("train")
        infer = execution_plan("infer")
        assert train == {"fsgwp": True, "pixel": True, "diffusion_sampler": False}
        assert infer == {"fsgwp": False, "pixel": False, "diffusion_sampler": True}

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            execution_plan("deploy")

    def test_call_counter_counts(self, head):
        before = head.calls
        head(rand_w())
        assert head.calls == before + 1

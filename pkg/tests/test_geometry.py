"""Geometry encoder: cross-frame mixing, depth decoding, label purity."""

import numpy as np
import pytest
import torch

from stemvla.config import ModelConfig
from stemvla.geometry import (DivergenceError, GeometryEncoder,
                              GeometryFeatures, aggregate_3d,
                              batch_future_depth_labels, decode_depth,
                              load_geometry, make_future_labels,
                              pretrain_geometry, save_geometry)
from stemvla.world import generate_episode

CFG = ModelConfig()


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(0)
    return GeometryEncoder(CFG)


@pytest.fixture(scope="module")
def episode():
    return generate_episode(0, "lift_block")


def rand_frames(t, seed=0):
    return np.random.default_rng(seed).uniform(size=(t, 32, 32, 3)).astype(np.float32)


class TestAggregate:
    def test_output_shape(self, encoder):
        feats = aggregate_3d(rand_frames(3), encoder)
        assert feats.latents.shape == (3, 16, CFG.d_geom)
        assert np.array_equal(feats.frame_times, [0, 1, 2])

    def test_duplicate_frames_equal_latents(self, encoder):
        f = rand_frames(1)
        frames = np.concatenate([f, f])
        feats = aggregate_3d(frames, encoder, use_time_encoding=False)
        assert torch.allclose(feats.latents[0], feats.latents[1], atol=1e-5)

    def test_single_frame_matches_duplicated_window(self, encoder):
        # with time encodings off, a duplicated frame adds no information
        f = rand_frames(1, seed=3)
        single = aggregate_3d(f, encoder, use_time_encoding=False)
        double = aggregate_3d(np.concatenate([f, f]), encoder,
                              use_time_encoding=False)
        assert torch.allclose(single.latents[0], double.latents[0], atol=1e-4)

    def test_cross_frame_mixing(self, encoder):
        frames = rand_frames(2, seed=1)
        base = aggregate_3d(frames, encoder)
        frames2 = frames.copy()
        frames2[0, 5, 5, 0] += 0.2
        perturbed = aggregate_3d(frames2, encoder)
        # frame 1 latents move although only frame 0 changed
        assert not torch.allclose(base.latents[1], perturbed.latents[1])

    def test_bad_shape_rejected(self, encoder):
        with pytest.raises(ValueError):
            aggregate_3d(np.zeros((2, 16, 16, 3)), encoder)
        with pytest.raises(ValueError):
            aggregate_3d(np.zeros((32, 32, 3)), encoder)

    def test_features_require_increasing_times(self, encoder):
        lat = torch.zeros(2, 16, CFG.d_geom)
        with pytest.raises(AssertionError):
            GeometryFeatures(latents=lat, frame_times=np.array([1, 0]))


class TestDepthDecode:
    def test_shape_and_nonnegative(self, encoder):
        feats = aggregate_3d(rand_frames(3), encoder)
        depth = decode_depth(feats, encoder)
        assert depth.shape == (3, 32, 32)
        assert (depth >= 0).all()

    def test_zero_head_gives_constant(self):
        torch.manual_seed(1)
        enc = GeometryEncoder(CFG)
        with torch.no_grad():
            enc.depth_head.weight.zero_()
            enc.depth_head.bias.fill_(0.3)
        feats = aggregate_3d(rand_frames(1, seed=2), enc)
        depth = decode_depth(feats, enc)
        expected = torch.nn.functional.softplus(torch.tensor(0.3))
        assert torch.allclose(depth, expected.expand_as(depth), atol=1e-6)


class TestPretrain:
    def test_overfit_and_freeze(self, episode):
        enc = pretrain_geometry([episode], CFG, steps=600, lr=2e-3, seed=0,
                                batch_size=8)
        assert enc.training_curve[-1] < 1e-3
        assert all(not p.requires_grad for p in enc.parameters())
        # held-in mean absolute error well under 5% of the depth range
        feats = aggregate_3d(episode.frames[:4], enc)
        pred = decode_depth(feats, enc)
        mae = (pred - torch.as_tensor(episode.depths[:4])).abs().mean()
        assert mae < 0.05 * 2.0

    def test_deterministic(self, episode):
        a = pretrain_geometry([episode], CFG, steps=5, seed=3)
        b = pretrain_geometry([episode], CFG, steps=5, seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_divergence_detected(self, episode):
        with pytest.raises(DivergenceError):
            pretrain_geometry([episode], CFG, steps=200, lr=1e6, seed=0)

    def test_checkpoint_round_trip(self, episode, tmp_path):
        enc = pretrain_geometry([episode], CFG, steps=3, seed=1)
        path = tmp_path / "geom.bin"
        save_geometry(enc, path)
        back = load_geometry(path)
        for (ka, pa), (kb, pb) in zip(enc.state_dict().items(),
                                      back.state_dict().items()):
            assert ka == kb and torch.equal(pa, pb)


class TestFutureLabels:
    def test_future_frame_only(self, encoder, episode):
        # labels at (t, n) and (t', n') agree whenever t + n == t' + n'
        d1, l1 = make_future_labels(episode, 2, 6, encoder)
        d2, l2 = make_future_labels(episode, 5, 3, encoder)
        assert torch.equal(d1, d2) and torch.equal(l1, l2)

    def test_degenerate_horizon(self, encoder, episode):
        d, _ = make_future_labels(episode, 3, 0, encoder)
        feats = aggregate_3d(episode.frames[3][None], encoder, frame_times=[0],
                             use_time_encoding=False)
        assert torch.equal(d, decode_depth(feats, encoder)[0])

    def test_overflow_rejected(self, encoder, episode):
        with pytest.raises(IndexError):
            make_future_labels(episode, len(episode) - 1, 1, encoder)

    def test_labels_detached(self, encoder, episode):
        d, latents = make_future_labels(episode, 1, 2, encoder)
        assert not d.requires_grad and not latents.requires_grad

    def test_batched_matches_single(self, encoder, episode):
        frames = torch.as_tensor(episode.frames[4:6])
        batched = batch_future_depth_labels(frames, encoder)
        d0, _ = make_future_labels(episode, 0, 4, encoder)
        d1, _ = make_future_labels(episode, 0, 5, encoder)
        assert torch.allclose(batched[0], d0, atol=1e-6)
        assert torch.allclose(batched[1], d1, atol=1e-6)

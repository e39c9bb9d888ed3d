"""Model pipeline: mapping matrix, jittered inverse, forward contracts."""

import numpy as np
import pytest

import awbkit.autodiff as ad
from awbkit.autodiff import Tensor
from awbkit.exceptions import InvalidArgumentError, SingularMatrixError
from awbkit.metrics import angular_loss
from awbkit.networks import (
    IlluminantEstimator,
    build_mapping_matrix,
    desk_config,
    forward,
    invert_with_jitter,
    predict_batch,
    toy_config,
)


def toy_model(seed=0, dtype=np.float64):
    return IlluminantEstimator(toy_config(), seed=seed, dtype=dtype)


def toy_image(seed=0, n=64):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, size=(3, n))


class TestMappingMatrix:
    def test_all_ones_vector_gives_uniform_singular_matrix(self):
        m = build_mapping_matrix(Tensor(np.ones(9), dtype=np.float64), eps=0.0)
        assert np.allclose(m.data, np.full((3, 3), 1 / 9), atol=1e-15)
        assert abs(np.linalg.det(m.data)) < 1e-12

    @pytest.mark.parametrize("sign", [1.0, -1.0])
    def test_identity_vector_gives_identity_over_three(self, sign):
        v = sign * np.eye(3).reshape(9)
        m = build_mapping_matrix(Tensor(v, dtype=np.float64), eps=0.0)
        assert np.allclose(m.data, np.eye(3) / 3.0, atol=1e-15)

    def test_entries_nonnegative_rows_from_vector_order(self):
        v = np.array([1.0, -2.0, 3.0, -4.0, 5.0, -6.0, 7.0, -8.0, 9.0])
        m = build_mapping_matrix(Tensor(v, dtype=np.float64), eps=0.0)
        assert np.all(m.data >= 0)
        assert m.data.sum() == pytest.approx(1.0, abs=1e-12)
        # row-major fill: first row is |1|, |-2|, |3| normalized
        assert np.allclose(m.data[0] * 45.0, [1.0, 2.0, 3.0])

    def test_gradient_through_construction(self):
        rng = np.random.default_rng(1)
        v = Tensor(rng.standard_normal(9), dtype=np.float64, requires_grad=True)
        probe = Tensor(rng.standard_normal((3, 3)))

        def build():
            return (build_mapping_matrix(v) * probe).sum()

        ok, worst = ad.gradcheck(build, [v], h=1e-6, rtol=1e-5, atol=1e-9)
        assert ok, worst


class TestJitteredInverse:
    def test_well_conditioned_matrix_not_jittered(self):
        m = Tensor(np.diag([0.5, 0.25, 0.25]) + 0.01, dtype=np.float64)
        inv, target, tries = invert_with_jitter(m, np.random.default_rng(0))
        assert target is m and tries == 0
        assert np.allclose(inv.data @ m.data, np.eye(3), atol=1e-4)

    def test_rank_one_matrix_gets_jittered(self):
        m = Tensor(np.full((3, 3), 1 / 9), dtype=np.float64)
        inv, target, tries = invert_with_jitter(m, np.random.default_rng(1))
        assert target is not m and 1 <= tries <= 5
        assert np.max(np.abs(target.data - m.data)) < 1e-2  # small offsets only
        assert np.max(np.abs(inv.data @ target.data - np.eye(3))) < 1e-9

    def test_zero_matrix_exhausts_retries(self):
        # offsets of scale 1e-4 leave |det| ~ 1e-12, below the floor
        m = Tensor(np.zeros((3, 3)), dtype=np.float64)
        with pytest.raises(SingularMatrixError):
            invert_with_jitter(m, np.random.default_rng(2))

    def test_gradient_flows_through_jittered_inverse(self):
        base = np.full((3, 3), 1 / 9)
        m = Tensor(base, dtype=np.float64, requires_grad=True)
        inv, target, tries = invert_with_jitter(m, np.random.default_rng(3))
        assert tries > 0
        inv.sum().backward()
        assert np.all(np.isfinite(m.grad))
        assert np.any(m.grad != 0)


class TestForward:
    def test_estimate_is_unit_norm(self):
        model = toy_model()
        est = forward(toy_image(), model)
        assert np.linalg.norm(est.illuminant) == pytest.approx(1.0, abs=1e-6)
        assert est.matrix.shape == (3, 3)
        assert est.working_estimate.shape == (3,)

    def test_forward_deterministic(self):
        model = toy_model()
        img = toy_image(seed=2)
        a = forward(img, model)
        b = forward(img, model)
        assert np.array_equal(a.illuminant, b.illuminant)
        assert np.array_equal(a.matrix, b.matrix)

    def test_batched_graph_matches_sequential(self):
        model = toy_model(seed=3)
        imgs = [toy_image(seed=i) for i in range(4)]
        batch = model.forward_batch(imgs)
        for i, img in enumerate(imgs):
            single = model.forward_batch([img])[0]
            assert np.allclose(batch[i].raw.data, single.raw.data, rtol=1e-6, atol=1e-12)

    def test_bad_pixel_shapes_rejected(self):
        model = toy_model()
        with pytest.raises(InvalidArgumentError):
            forward(np.zeros((4, 10)), model)
        with pytest.raises(InvalidArgumentError):
            forward(np.zeros((3, 0)), model)

    def test_gradient_reaches_every_parameter(self):
        model = toy_model(seed=4)
        gt = np.array([0.4, 0.8, 0.45])
        res = model.forward_batch([toy_image(seed=5)])[0]
        loss = angular_loss(gt, res.raw)
        loss.backward()
        for p in model.parameters():
            assert np.any(p.tensor.grad != 0), f"no gradient reached {p.name}"

    def test_float32_default_dtype(self):
        model = IlluminantEstimator(toy_config(), seed=0)
        assert model.parameters()[2].data.dtype == np.float32
        est = forward(toy_image().astype(np.float32), model)
        assert np.isfinite(est.illuminant).all()


class TestPredictBatch:
    def test_empty_list(self):
        ests, fails = predict_batch([], toy_model())
        assert ests == [] and fails == []

    def test_matches_single_forward_bitwise(self):
        model = toy_model(seed=6)
        imgs = [toy_image(seed=i) for i in range(3)]
        ests, fails = predict_batch(imgs, model)
        assert not fails
        for img, est in zip(imgs, ests):
            ref = forward(img, model)
            assert np.array_equal(est.illuminant, ref.illuminant)

    def test_failures_recorded_not_raised(self):
        model = toy_model()
        imgs = [toy_image(seed=0), np.zeros((5, 5)), toy_image(seed=1)]
        ests, fails = predict_batch(imgs, model)
        assert ests[0] is not None and ests[2] is not None
        assert ests[1] is None
        assert len(fails) == 1 and fails[0][0] == 1

    def test_repeat_run_identical(self):
        model = toy_model(seed=7)
        imgs = [toy_image(seed=i) for i in range(3)]
        a, _ = predict_batch(imgs, model)
        b, _ = predict_batch(imgs, model)
        for x, y in zip(a, b):
            assert np.array_equal(x.illuminant, y.illuminant)


class TestConfigs:
    def test_toy_geometry(self):
        model = toy_model()
        assert model.mapping_net.flat == 2 * 3 * 3

    def test_desk_geometry(self):
        model = IlluminantEstimator(desk_config(), seed=0)
        assert model.mapping_net.flat == 64 * 4 * 4

    def test_default_geometry(self):
        from awbkit.networks import FeatureNet, default_config

        net = FeatureNet(default_config(), 9, "map", np.random.default_rng(0), np.float32)
        assert net.flat == 256 * 8 * 8

    def test_two_nets_do_not_share_weights(self):
        model = toy_model(seed=8)
        w_map = model.mapping_net.stages[0][0].data
        w_est = model.estimator_net.stages[0][0].data
        assert not np.array_equal(w_map, w_est)

    def test_same_seed_same_init(self):
        a, b = toy_model(seed=9), toy_model(seed=9)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.data, pb.data)

    def test_bad_config_rejected(self):
        from awbkit.networks import ModelConfig

        with pytest.raises(InvalidArgumentError):
            ModelConfig(channels=(8, 16))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graspfield.approx import Adam
from graspfield.geometry import WristPose, make_circle, rot2
from graspfield.graspdata import GraspExample
from graspfield.hand import HandModel
from graspfield.scorefield import (
    GfTrainConfig, NoiseSchedule, ScoreModel, dsm_loss, perturb,
    primitive_action, time_features, train_gf, wrist_frame_cloud,
)


@pytest.fixture(scope="module")
def schedule():
    return NoiseSchedule()


class TestSchedule:
    def test_sigma_zero(self, schedule):
        assert schedule.sigma(0.0) == 0.0

    def test_sigma_one(self, schedule):
        # exponent at t=1 is -(10-0.1)/2 - 0.1 = -5.05
        assert schedule.sigma(1.0) == pytest.approx(1 - np.exp(-5.05), rel=1e-12)
        assert schedule.sigma(1.0) == pytest.approx(0.993591, abs=1e-6)

    def test_sigma_near_zero_time(self, schedule):
        assert schedule.sigma(1e-5) < 2e-6

    def test_out_of_range(self, schedule):
        with pytest.raises(ValueError):
            schedule.sigma(1.5)
        with pytest.raises(ValueError):
            schedule.sigma(-0.1)

    @given(st.floats(1e-5, 1.0), st.floats(1e-5, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_strictly_increasing(self, schedule, t1, t2):
        if t1 == t2:
            return
        lo, hi = min(t1, t2), max(t1, t2)
        assert schedule.sigma(lo) < schedule.sigma(hi)

    def test_bad_schedule_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(t_min=0.5, t_inference=0.005)


class TestPerturb:
    def test_tiny_time_tiny_move(self, schedule):
        rng = np.random.default_rng(0)
        j = np.zeros((100, 6))
        jt, z = perturb(j, np.full(100, schedule.t_min), schedule, rng)
        assert np.max(np.abs(jt)) < 2e-6 * np.max(np.abs(z)) + 1e-12

    def test_perturbation_variance(self, schedule):
        rng = np.random.default_rng(1)
        t = 0.6
        sig = float(schedule.sigma(t))
        j = np.zeros((100_000, 1))
        jt, _ = perturb(j, np.full(len(j), t), schedule, rng)
        assert np.var(jt) == pytest.approx(sig**2, rel=0.02)

    def test_zero_noise_identity(self, schedule):
        class ZeroRng:
            def standard_normal(self, shape):
                return np.zeros(shape)

        j = np.arange(6.0)[None]
        jt, _ = perturb(j, np.array([0.5]), schedule, ZeroRng())
        assert np.array_equal(jt, j)


class TestDsmLoss:
    def test_zero_output_zero_noise_zero_loss(self, schedule):
        rng = np.random.default_rng(2)
        m = ScoreModel.create(rng, schedule, joint_dim=6, feat=8, hidden=16)
        for k in m.params:
            m.params[k][:] = 0.0
        j = rng.normal(size=(4, 6))
        clouds = rng.normal(size=(4, 5, 2))
        loss, grads = dsm_loss(m, j, j.copy(), clouds, np.full(4, 0.5))
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads.values())

    def test_empty_batch_rejected(self, schedule):
        m = ScoreModel.create(np.random.default_rng(0), schedule)
        with pytest.raises(ValueError, match="empty"):
            dsm_loss(m, np.zeros((0, 6)), np.zeros((0, 6)), np.zeros((0, 3, 2)),
                     np.zeros(0))

    @pytest.mark.slow
    def test_gaussian_score_recovery(self, schedule):
        # 1-D data from N(0, 1): the perturbed-density score is exactly
        # -x / (1 + sigma(t)^2); the trained model must recover it
        rng = np.random.default_rng(1)
        data = rng.normal(0.0, 1.0, size=(1000, 1))
        clouds = np.zeros((1000, 1, 2))
        m = ScoreModel.create(rng, schedule, joint_dim=1, feat=16, hidden=64)
        opt = Adam(lr=2e-3)
        n = 8000
        for it in range(n):
            if it == n // 2:
                opt.lr = 5e-4
            if it == 3 * n // 4:
                opt.lr = 1e-4
            idx = rng.choice(len(data), 100, replace=False)
            t = rng.uniform(schedule.t_min, schedule.t_max, 100)
            jt, _ = perturb(data[idx], t, schedule, rng)
            _, grads = dsm_loss(m, data[idx], jt, clouds[idx], t)
            opt.step(m.params, grads)
        for tv, tol in ((0.3, None), (0.8, 0.05)):
            var = 1.0 + float(schedule.sigma(tv))**2
            tot = np.sqrt(var)
            grid = np.linspace(-3 * tot, 3 * tot, 25)[:, None]
            sc = m.score(grid, np.zeros((25, 1, 2)), np.full(25, tv))[:, 0]
            ana = -grid[:, 0] / var
            cos = np.dot(sc, ana) / (np.linalg.norm(sc) * np.linalg.norm(ana))
            assert cos >= 0.95
            if tol is not None:
                inner = np.abs(grid[:, 0]) > 0.3 * tot
                rel = np.abs(sc - ana)[inner] / np.abs(ana[inner])
                assert np.median(rel) < tol


def toy_examples(n=16, seed=3):
    """Fabricated grasp examples around a small disc for training plumbing."""
    rng = np.random.default_rng(seed)
    obj = make_circle("disc-t", 0.025).rest_on_table(x=0.0)
    hand = HandModel()
    ex = []
    for _ in range(n):
        wrist = WristPose(rng.uniform(-0.12, -0.07), rng.uniform(0.0, 0.05),
                          rng.uniform(-0.3, 0.3))
        joints = rng.uniform(0.3, 1.2, 6)
        ex.append(GraspExample(obj.id, wrist, joints, np.zeros(2), 0.1))
    return ex, {obj.id: obj}, hand


class TestTraining:
    def test_loss_decreases_and_deterministic(self):
        ex, objs, hand = toy_examples()
        cfg = GfTrainConfig(n_updates=500, lr=1e-3, feat=16, hidden=32, seed=5)
        m1, trace1 = train_gf(ex, objs, hand, cfg)
        m2, trace2 = train_gf(ex, objs, hand, cfg)
        assert np.array_equal(trace1, trace2)
        for k in m1.params:
            assert np.array_equal(m1.params[k], m2.params[k])
        assert np.mean(trace1[-50:]) < 0.5 * np.mean(trace1[:20])

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_gf([], {}, HandModel())

    def test_single_example_field_points_home(self):
        # a one-example dataset defines a single mode; from a perturbed
        # start the model output must point back toward J*
        ex, objs, hand = toy_examples(n=1, seed=7)
        cfg = GfTrainConfig(n_updates=3000, lr=2e-3, feat=16, hidden=32, seed=5)
        m, _ = train_gf(ex, objs, hand, cfg)
        jn = hand.normalize_joints(ex[0].joints)
        cloud = wrist_frame_cloud(objs[ex[0].object_id], ex[0].wrist)
        rng = np.random.default_rng(0)
        cosines = []
        for _ in range(50):
            jt = jn + rng.normal(0, 0.3, 6)
            out, _ = m.forward(jt[None], cloud[None],
                               np.array([m.schedule.t_inference]))
            d = jn - jt
            cosines.append(np.dot(out[0], d)
                           / (np.linalg.norm(out[0]) * np.linalg.norm(d)))
        assert np.mean(cosines) > 0.9


class TestPrimitiveAction:
    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(4)
        m = ScoreModel.create(rng, joint_dim=6, feat=16, hidden=32)
        hand = HandModel()
        joints = rng.uniform(0, 2, 6)
        cloud = rng.normal(0.0, 0.05, (64, 2)) + np.array([0.1, 0.05])
        wrist = WristPose(-0.05, 0.02, 0.3)
        a1 = primitive_action(m, joints, cloud, wrist, hand)
        ang, shift = 1.1, np.array([0.4, -0.2])
        cloud2 = cloud @ rot2(ang).T + shift
        wpos2 = rot2(ang) @ wrist.position + shift
        wrist2 = WristPose(wpos2[0], wpos2[1], wrist.theta + ang)
        a2 = primitive_action(m, joints, cloud2, wrist2, hand)
        assert np.allclose(a1, a2, atol=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        m = ScoreModel.create(rng, joint_dim=6, feat=8, hidden=16)
        joints = rng.uniform(0, 2, 6)
        cloud = rng.normal(size=(10, 2))
        wrist = WristPose(0.0, 0.0, 0.0)
        a1 = primitive_action(m, joints, cloud, wrist)
        a2 = primitive_action(m, joints, cloud, wrist)
        assert np.array_equal(a1, a2)

    def test_finite_output(self):
        rng = np.random.default_rng(6)
        m = ScoreModel.create(rng, joint_dim=6, feat=8, hidden=16)
        a = primitive_action(m, np.full(6, 2.0), rng.normal(size=(64, 2)),
                             WristPose(0.3, -0.1, 2.0))
        assert a.shape == (6,) and np.all(np.isfinite(a))


class TestCheckpoint:
    def test_roundtrip_preserves_scores(self, tmp_path):
        rng = np.random.default_rng(7)
        sched = NoiseSchedule(t_inference=0.01)
        m = ScoreModel.create(rng, sched, joint_dim=6, feat=16, hidden=32)
        path = tmp_path / "gf.ckpt"
        m.save(path)
        back = ScoreModel.load(path)
        assert back.schedule == sched
        j = rng.normal(size=(3, 6))
        clouds = rng.normal(size=(3, 8, 2))
        t = rng.uniform(0.1, 1.0, 3)
        assert np.array_equal(m.forward(j, clouds, t)[0],
                              back.forward(j, clouds, t)[0])

    def test_wrong_kind_rejected(self, tmp_path):
        from graspfield.approx import save_params
        path = tmp_path / "x.ckpt"
        save_params(path, {"w": np.ones(2)}, {"kind": "other"})
        with pytest.raises(ValueError, match="score-model"):
            ScoreModel.load(path)


def test_time_features_shape():
    f = time_features(np.array([0.1, 0.5]))
    assert f.shape == (2, 8)
    assert np.all(np.abs(f) <= 1.0)

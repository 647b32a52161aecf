import numpy as np
import pytest

from listops import autodiff as ad

from gradcheck import max_rel_error, tensor

PRIMITIVE_TOL = 1e-4
N_POINTS = 20


def check_primitive(build, wrt_factory, points=N_POINTS, seed=0):
    """FD-check an op at `points` random configurations."""
    rng = np.random.default_rng(seed)
    for _ in range(points):
        wrt, loss_fn = build(rng) if wrt_factory is None else wrt_factory(rng)
        assert max_rel_error(loss_fn, wrt) <= PRIMITIVE_TOL


class TestPrimitiveGradients:
    """Every primitive against central finite differences, float64."""

    def run(self, factory, points=N_POINTS):
        rng = np.random.default_rng(0)
        for _ in range(points):
            wrt, loss_fn = factory(rng)
            assert max_rel_error(loss_fn, wrt) <= PRIMITIVE_TOL

    def test_add(self):
        def factory(rng):
            a, b = tensor(rng, (3, 4)), tensor(rng, (3, 4))
            v = ad.Tensor(rng.standard_normal((3, 4)))
            return [a, b], lambda: ad.sum_all(ad.mul(ad.add(a, b), v))
        self.run(factory)

    def test_add_broadcast(self):
        def factory(rng):
            a, b = tensor(rng, (3, 4)), tensor(rng, (4,))
            v = ad.Tensor(rng.standard_normal((3, 4)))
            return [a, b], lambda: ad.sum_all(ad.mul(ad.add(a, b), v))
        self.run(factory)

    def test_sub(self):
        def factory(rng):
            a, b = tensor(rng, (2, 5)), tensor(rng, (2, 5))
            v = ad.Tensor(rng.standard_normal((2, 5)))
            return [a, b], lambda: ad.sum_all(ad.mul(ad.sub(a, b), v))
        self.run(factory)

    def test_mul(self):
        def factory(rng):
            a, b = tensor(rng, (3, 3)), tensor(rng, (3, 3))
            return [a, b], lambda: ad.sum_all(ad.mul(a, b))
        self.run(factory)

    def test_scale(self):
        def factory(rng):
            a = tensor(rng, (4,))
            c = float(rng.standard_normal())
            v = ad.Tensor(rng.standard_normal(4))
            return [a], lambda: ad.sum_all(ad.mul(ad.scale(a, c), v))
        self.run(factory)

    def test_matmul(self):
        def factory(rng):
            a, b = tensor(rng, (3, 4)), tensor(rng, (4, 2))
            v = ad.Tensor(rng.standard_normal((3, 2)))
            return [a, b], lambda: ad.sum_all(ad.mul(ad.matmul(a, b), v))
        self.run(factory)

    def test_affine(self):
        def factory(rng):
            x, w, b = tensor(rng, (3, 4)), tensor(rng, (4, 5)), tensor(rng, (5,))
            v = ad.Tensor(rng.standard_normal((3, 5)))
            return [x, w, b], lambda: ad.sum_all(ad.mul(ad.affine(x, w, b), v))
        self.run(factory)

    def test_concat(self):
        def factory(rng):
            parts = [tensor(rng, (2, 3)), tensor(rng, (1, 3)), tensor(rng, (4, 3))]
            v = ad.Tensor(rng.standard_normal((7, 3)))
            return parts, lambda: ad.sum_all(ad.mul(ad.concat(parts, axis=0), v))
        self.run(factory)

    def test_concat_axis1(self):
        def factory(rng):
            parts = [tensor(rng, (2, 3)), tensor(rng, (2, 2))]
            v = ad.Tensor(rng.standard_normal((2, 5)))
            return parts, lambda: ad.sum_all(ad.mul(ad.concat(parts, axis=1), v))
        self.run(factory)

    def test_slice_axis(self):
        def factory(rng):
            t = tensor(rng, (4, 6))
            v = ad.Tensor(rng.standard_normal((4, 3)))
            return [t], lambda: ad.sum_all(ad.mul(ad.slice_axis(t, 1, 4, axis=1), v))
        self.run(factory)

    def test_reshape(self):
        def factory(rng):
            t = tensor(rng, (2, 6))
            v = ad.Tensor(rng.standard_normal((3, 4)))
            return [t], lambda: ad.sum_all(ad.mul(ad.reshape(t, (3, 4)), v))
        self.run(factory)

    def test_sigmoid(self):
        def factory(rng):
            t = tensor(rng, (3, 4))
            v = ad.Tensor(rng.standard_normal((3, 4)))
            return [t], lambda: ad.sum_all(ad.mul(ad.sigmoid(t), v))
        self.run(factory)

    def test_tanh(self):
        def factory(rng):
            t = tensor(rng, (3, 4))
            v = ad.Tensor(rng.standard_normal((3, 4)))
            return [t], lambda: ad.sum_all(ad.mul(ad.tanh(t), v))
        self.run(factory)

    def test_relu(self):
        def factory(rng):
            # keep activations away from the kink where FD is ill-defined
            data = rng.standard_normal((3, 4))
            data[np.abs(data) < 0.1] += 0.2
            t = ad.Tensor(data, requires_grad=True)
            v = ad.Tensor(rng.standard_normal((3, 4)))
            return [t], lambda: ad.sum_all(ad.mul(ad.relu(t), v))
        self.run(factory)

    def test_softmax(self):
        def factory(rng):
            t = tensor(rng, (2, 6))
            v = ad.Tensor(rng.standard_normal((2, 6)))
            return [t], lambda: ad.sum_all(ad.mul(ad.softmax(t), v))
        self.run(factory)

    def test_log_softmax(self):
        def factory(rng):
            t = tensor(rng, (2, 6))
            v = ad.Tensor(rng.standard_normal((2, 6)))
            return [t], lambda: ad.sum_all(ad.mul(ad.log_softmax(t), v))
        self.run(factory)

    def test_take_rows(self):
        def factory(rng):
            t = tensor(rng, (6, 3))
            idx = rng.integers(0, 6, size=8)  # repeats exercise scatter-add
            v = ad.Tensor(rng.standard_normal((8, 3)))
            return [t], lambda: ad.sum_all(ad.mul(ad.take_rows(t, idx), v))
        self.run(factory)

    def test_cross_entropy(self):
        def factory(rng):
            t = tensor(rng, (4, 10))
            labels = rng.integers(0, 10, size=4)
            return [t], lambda: ad.cross_entropy(t, labels)
        self.run(factory)

    def test_sum_mean(self):
        def factory(rng):
            t = tensor(rng, (3, 5))
            return [t], lambda: ad.add(ad.sum_all(t), ad.mean_all(t))
        self.run(factory)

    def test_add_n(self):
        def factory(rng):
            parts = [tensor(rng, (2, 3)) for _ in range(4)]
            v = ad.Tensor(rng.standard_normal((2, 3)))
            return parts, lambda: ad.sum_all(ad.mul(ad.add_n(parts), v))
        self.run(factory)

    def test_gumbel_softmax_st_soft_backward(self):
        # noise off: backward is the tempered softmax Jacobian-vector product
        def factory(rng):
            t = tensor(rng, (5,))
            v = ad.Tensor(rng.standard_normal(5))
            temperature = float(rng.uniform(0.5, 2.0))

            def loss():
                soft = ad.softmax(ad.scale(t, 1.0 / temperature))
                return ad.sum_all(ad.mul(soft, v))

            # check the straight-through op's recorded gradient directly
            t.grad = None
            out = ad.gumbel_softmax_st(t, temperature, None)
            ad.backward(ad.sum_all(ad.mul(out, v)))
            st_grad = t.grad.copy()
            assert max_rel_error(loss, [t]) <= PRIMITIVE_TOL
            np.testing.assert_allclose(st_grad, t.grad, rtol=1e-9)
            return [t], loss
        self.run(factory, points=10)


class TestFusedCells:
    CELL_TOL = 1e-3

    def test_treelstm_leaf(self):
        rng = np.random.default_rng(1)
        for _ in range(N_POINTS):
            x, w, b = tensor(rng, (3, 4)), tensor(rng, (4, 12), 0.5), tensor(rng, (12,), 0.2)
            v = ad.Tensor(rng.standard_normal((3, 8)))
            err = max_rel_error(lambda: ad.sum_all(ad.mul(ad.treelstm_leaf(x, w, b), v)), [x, w, b])
            assert err <= self.CELL_TOL

    def test_treelstm_cell(self):
        rng = np.random.default_rng(2)
        for _ in range(N_POINTS):
            left, right = tensor(rng, (2, 8)), tensor(rng, (2, 8))
            w, b = tensor(rng, (8, 20), 0.5), tensor(rng, (20,), 0.2)
            v = ad.Tensor(rng.standard_normal((2, 8)))
            err = max_rel_error(
                lambda: ad.sum_all(ad.mul(ad.treelstm_cell(left, right, w, b), v)),
                [left, right, w, b],
            )
            assert err <= self.CELL_TOL

    def test_lstm_cell(self):
        rng = np.random.default_rng(3)
        for _ in range(N_POINTS):
            x, state = tensor(rng, (2, 5)), tensor(rng, (2, 8))
            w, b = tensor(rng, (9, 16), 0.5), tensor(rng, (16,), 0.2)
            v = ad.Tensor(rng.standard_normal((2, 8)))
            err = max_rel_error(
                lambda: ad.sum_all(ad.mul(ad.lstm_cell(x, state, w, b), v)),
                [x, state, w, b],
            )
            assert err <= self.CELL_TOL


class TestBackward:
    def test_sum_gradient_is_ones(self):
        p = tensor(np.random.default_rng(0), (3, 3))
        ad.backward(ad.sum_all(p))
        np.testing.assert_array_equal(p.grad, np.ones((3, 3)))

    def test_zero_scale_gradient_is_zeros(self):
        p = tensor(np.random.default_rng(0), (4,))
        ad.backward(ad.sum_all(ad.scale(p, 0.0)))
        np.testing.assert_array_equal(p.grad, np.zeros(4))

    def test_non_scalar_loss_rejected(self):
        p = tensor(np.random.default_rng(0), (3,))
        with pytest.raises(ad.NonScalarLoss):
            ad.backward(ad.scale(p, 2.0))

    def test_repeated_backward_accumulates(self):
        p = tensor(np.random.default_rng(0), (3,))
        loss = ad.sum_all(p)
        ad.backward(loss)
        first = p.grad.copy()
        loss2 = ad.sum_all(p)
        ad.backward(loss2)
        np.testing.assert_allclose(p.grad, 2 * first)

    def test_diamond_graph_accumulation(self):
        p = tensor(np.random.default_rng(0), (3,))
        # loss = sum(p * p + p): dL/dp = 2p + 1
        loss = ad.sum_all(ad.add(ad.mul(p, p), p))
        ad.backward(loss)
        np.testing.assert_allclose(p.grad, 2 * p.data + 1)

    def test_no_grad_suppresses_tape(self):
        p = tensor(np.random.default_rng(0), (3,))
        with ad.no_grad():
            out = ad.sum_all(ad.mul(p, p))
        assert not out.requires_grad
        assert out._backward is None

    def test_shape_mismatch_reports_shapes(self):
        a = ad.Tensor(np.zeros((2, 3)), requires_grad=True)
        b = ad.Tensor(np.zeros((4, 5)))
        with pytest.raises(ad.ShapeMismatch) as err:
            ad.matmul(a, b)
        assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


class TestSoftmaxValues:
    def test_softmax_of_zeros_is_uniform(self):
        out = ad.softmax(ad.Tensor(np.zeros(10)))
        np.testing.assert_allclose(out.data, np.full(10, 0.1))

    def test_cross_entropy_of_uniform_logits(self):
        loss = ad.cross_entropy(ad.Tensor(np.zeros((1, 10))), [7])
        assert loss.item() == pytest.approx(np.log(10.0), abs=1e-12)

    def test_cross_entropy_label_range(self):
        with pytest.raises(ad.ShapeMismatch):
            ad.cross_entropy(ad.Tensor(np.zeros((1, 10))), [10])


class TestAdam:
    def test_zero_grads_fresh_state_is_identity(self):
        p = ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = ad.Adam({"p": p}, lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert opt.step_count == 1

    def test_single_step_with_unit_gradient(self):
        # bias-corrected first step moves by ~lr regardless of gradient scale
        p = ad.Tensor(np.array(5.0), requires_grad=True)
        opt = ad.Adam({"p": p}, lr=0.1)
        p.grad = np.array(1.0)
        opt.step()
        expected = 5.0 - 0.1 * 1.0 / (1.0 + 1e-8)
        assert p.data == pytest.approx(expected, abs=1e-12)
        assert p.grad is None  # step consumes the gradient

    def test_hand_computed_two_steps(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = ad.Tensor(np.array(0.0), requires_grad=True)
        opt = ad.Adam({"p": p}, lr=lr, beta1=b1, beta2=b2, eps=eps)
        m = v = 0.0
        x = 0.0
        for t, g in [(1, 2.0), (2, -1.0)]:
            p.grad = np.array(g)
            opt.step()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert p.data == pytest.approx(x, abs=1e-14)

    def test_l2_weight_decay(self):
        p = ad.Tensor(np.array(2.0), requires_grad=True)
        opt = ad.Adam({"p": p}, lr=0.1, l2=0.5)
        opt.step()  # grad None -> decay alone drives the update
        assert p.data < 2.0

    def test_deterministic_trajectories(self):
        def run():
            rng = np.random.default_rng(3)
            p = ad.parameter((4, 4), rng, 0.5, dtype=np.float64)
            opt = ad.Adam({"p": p}, lr=0.01)
            for _ in range(5):
                ad.backward(ad.sum_all(ad.mul(p, p)))
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_requires_tracked_params(self):
        with pytest.raises(ad.UninitializedState):
            ad.Adam({}, lr=0.1)
        with pytest.raises(ad.UninitializedState):
            ad.Adam({"p": ad.Tensor(np.zeros(3))}, lr=0.1)


class TestGumbelSoftmaxST:
    def test_forward_is_one_hot(self, rng):
        logits = ad.Tensor(rng.standard_normal(7), requires_grad=True)
        for _ in range(200):
            out = ad.gumbel_softmax_st(logits, 1.0, rng)
            assert out.data.sum() == 1.0
            assert np.count_nonzero(out.data) == 1

    def test_deterministic_mode_is_argmax(self):
        logits = ad.Tensor(np.array([0.1, 2.0, -1.0]))
        out = ad.gumbel_softmax_st(logits, 1.0, None)
        np.testing.assert_array_equal(out.data, [0.0, 1.0, 0.0])

    def test_length_one_always_selected(self, rng):
        logits = ad.Tensor(np.array([0.3]), requires_grad=True)
        out = ad.gumbel_softmax_st(logits, 1.0, rng)
        np.testing.assert_array_equal(out.data, [1.0])

    def test_selection_frequencies_match_softmax(self):
        rng = np.random.default_rng(123)
        logits_data = np.array([0.5, 1.5, -0.3, 0.0])
        logits = ad.Tensor(logits_data, requires_grad=True)
        counts = np.zeros(4)
        n = 100_000
        for _ in range(n):
            out = ad.gumbel_softmax_st(logits, 1.0, rng)
            counts[int(np.argmax(out.data))] += 1
        target = np.exp(logits_data) / np.exp(logits_data).sum()
        np.testing.assert_allclose(counts / n, target, atol=0.01)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ad.NonPositiveTemperature):
            ad.gumbel_softmax_st(ad.Tensor(np.zeros(3)), 0.0, None)

    def test_backward_matches_soft_jacobian(self):
        logits = ad.Tensor(np.array([0.2, -1.0, 0.7]), requires_grad=True)
        v = np.array([0.3, -0.2, 1.1])
        temperature = 2.0
        out = ad.gumbel_softmax_st(logits, temperature, None)
        ad.backward(ad.sum_all(ad.mul(out, ad.Tensor(v))))
        z = logits.data / temperature
        soft = np.exp(z - z.max())
        soft /= soft.sum()
        expected = soft * (v - v @ soft) / temperature
        np.testing.assert_allclose(logits.grad, expected, rtol=1e-12)


class TestReinforce:
    def test_reward_equal_baseline_gives_zero_gradient(self):
        lp = ad.Tensor(np.array(-0.7), requires_grad=True)
        ad.backward(ad.reinforce_loss([lp], reward=0.5, baseline=0.5))
        np.testing.assert_array_equal(lp.grad, np.array(0.0))

    def test_positive_advantage_pushes_log_prob_up(self):
        lp = ad.Tensor(np.array(-0.7), requires_grad=True)
        ad.backward(ad.reinforce_loss([lp], reward=1.0, baseline=0.0))
        assert lp.grad == -1.0  # minimizing the surrogate raises the log-prob

    def test_negative_advantage_pushes_down(self):
        lp = ad.Tensor(np.array(-0.7), requires_grad=True)
        ad.backward(ad.reinforce_loss([lp], reward=0.0, baseline=0.5))
        assert lp.grad == 0.5

    def test_empty_episode(self):
        loss = ad.reinforce_loss([], reward=1.0, baseline=0.0)
        assert loss.item() == 0.0

    def test_two_armed_bandit_learns_the_rewarding_arm(self):
        # arm 0 pays 1, arm 1 pays 0; REINFORCE should saturate arm 0
        rng = np.random.default_rng(7)
        logits = ad.Tensor(np.zeros(2), requires_grad=True)
        opt = ad.Adam({"logits": logits}, lr=0.05)
        baseline = 0.0
        for _ in range(500):
            logp = ad.log_softmax(ad.reshape(logits, (1, 2)), axis=1)
            probs = np.exp(logp.data[0])
            arm = int(rng.random() < probs[1])
            reward = 1.0 if arm == 0 else 0.0
            chosen = ad.slice_axis(logp, arm, arm + 1, axis=1)
            loss = ad.mean_all(ad.reinforce_loss([chosen], reward, baseline))
            baseline = ad.moving_baseline(baseline, reward)
            ad.backward(loss)
            opt.step()
        final = np.exp(logits.data - logits.data.max())
        final /= final.sum()
        assert final[0] > 0.95


class TestMovingBaseline:
    def test_fixed_point(self):
        assert ad.moving_baseline(0.7, 0.7) == pytest.approx(0.7)

    def test_high_decay_barely_moves(self):
        assert ad.moving_baseline(1.0, 0.0, decay=0.999) == pytest.approx(0.999)

    def test_constant_rewards_converge(self):
        b = 0.0
        for _ in range(200):
            b = ad.moving_baseline(b, 1.0)
        assert b == pytest.approx(1.0, abs=1e-8)


class TestCheckpointContainer:
    def test_round_trip(self, tmp_path, rng):
        arrays = {
            "embed.weight": rng.standard_normal((5, 3)).astype(np.float32),
            "mlp.b": rng.standard_normal(4),
            "scalar": np.float64(2.5) * np.ones(()),
        }
        path = tmp_path / "model.ckpt"
        ad.save_tensors(path, arrays)
        loaded = ad.load_tensors(path)
        assert sorted(loaded) == sorted(arrays)
        for name in arrays:
            assert loaded[name].dtype == arrays[name].dtype
            assert loaded[name].shape == arrays[name].shape
            np.testing.assert_array_equal(loaded[name], arrays[name])

    def test_manifest_is_plain_text(self, tmp_path):
        path = tmp_path / "model.ckpt"
        ad.save_tensors(path, {"w": np.ones((2, 2), dtype=np.float32)})
        manifest = (tmp_path / "model.ckpt.manifest").read_text(encoding="utf-8")
        assert manifest.splitlines()[0] == "listops-tensors v1"
        assert "w <f4 2,2 0" in manifest

    def test_binary_is_little_endian_raw_values(self, tmp_path):
        arr = np.array([1.5, -2.0], dtype=np.float32)
        path = tmp_path / "model.ckpt"
        ad.save_tensors(path, {"w": arr})
        raw = path.read_bytes()
        assert raw == arr.astype("<f4").tobytes()

    def test_rejects_foreign_manifest(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"")
        (tmp_path / "model.ckpt.manifest").write_text("nope\n", encoding="utf-8")
        with pytest.raises(ValueError):
            ad.load_tensors(path)

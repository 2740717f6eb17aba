"""Tests for jacobian heat maps, embedding export, and transfer initialization."""

import hashlib

import numpy as np
import pytest
from scipy import stats

from tgpd import agent, analysis, distill, env, nn


@pytest.fixture(scope="module")
def game1():
    return env.load_bundled_game("game1")


@pytest.fixture(scope="module")
def game4():
    return env.load_bundled_game("game4")


def tiny_hp(**over):
    base = dict(d_emb=4, hidden=6, d1=5, batch_size=4, warmup=4,
                eval_interval=200, eval_episodes=4, replay_capacity=500)
    base.update(over)
    return agent.HyperParams(**base)


def param_digest(net):
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(p.values.tobytes())
    return h.hexdigest()


class TestLayerPair:
    def test_allowed_pairs(self):
        for up, down in analysis.LAYER_PAIRS:
            analysis.LayerPair(up, down)

    def test_disallowed_pair(self):
        with pytest.raises(ValueError):
            analysis.LayerPair("mean_pool", "action_head")


class TestMeanJacobian:
    def test_linear_head_jacobian_is_weight_transpose(self, game1):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=0)
        states = [net.encode("you are hungry now"), net.encode("you are bored now")]
        jac = analysis.mean_jacobian(net, "game1", states, analysis.LayerPair("relu", "action_head"))
        np.testing.assert_allclose(jac, net.heads["game1"].w_act.values.T, atol=1e-7)

    def test_dead_relu_unit_gives_zero_rows(self, game1):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=0)
        # force unit 2 dead: hugely negative bias
        net.b1.values[2] = -1e3
        states = [net.encode("you are hungry now"), net.encode("you are sleepy now")]
        jac = analysis.mean_jacobian(net, "game1", states,
                                     analysis.LayerPair("mean_pool", "relu"))
        np.testing.assert_array_equal(jac[2], 0.0)

    def test_matches_finite_differences_single_state(self, game1):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=3, dtype=np.float64)
        tokens = net.encode("you are hungry now")
        jac = analysis.mean_jacobian(net, "game1", [tokens],
                                     analysis.LayerPair("mean_pool", "relu"))

        trace = agent.forward_trace(net, tokens)
        mp = trace.mean_pool.values.copy()

        def relu_of(mp_vals):
            z = mp_vals @ net.w1.values + net.b1.values
            return np.maximum(z, 0)

        h = 1e-6
        fd = np.zeros_like(jac)
        for j in range(mp.size):
            up = mp.copy(); up[j] += h
            dn = mp.copy(); dn[j] -= h
            fd[:, j] = (relu_of(up) - relu_of(dn)) / (2 * h)
        err = np.abs(jac - fd).max() / max(np.abs(fd).max(), 1.0)
        assert err <= 1e-4

    def test_does_not_mutate_parameters(self, game1):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=5)
        states = [net.encode("you are hungry now")]
        before = param_digest(net)
        for up, down in analysis.LAYER_PAIRS:
            analysis.mean_jacobian(net, "game1", states, analysis.LayerPair(up, down))
        assert param_digest(net) == before

    def test_state_order_invariance(self, game1):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=1)
        states = [net.encode(t) for t in
                  ["you are hungry now", "you are sleepy now", "you are bored now"]]
        pair = analysis.LayerPair("mean_pool", "relu")
        a = analysis.mean_jacobian(net, "game1", states, pair)
        b = analysis.mean_jacobian(net, "game1", states[::-1], pair)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_requires_states(self, game1):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=0)
        with pytest.raises(ValueError):
            analysis.mean_jacobian(net, "game1", [], analysis.LayerPair("mean_pool", "relu"))


class TestHeatMap:
    def test_endpoint_scaling(self):
        hm = analysis.to_heatmap(np.array([[0.0, 2.5]]))
        np.testing.assert_array_equal(hm.scaled, [[0, 255]])

    def test_scale_invariance(self):
        raw = np.array([[0.1, -0.4], [0.2, 0.05]])
        a = analysis.to_heatmap(raw)
        b = analysis.to_heatmap(3.0 * raw)
        np.testing.assert_array_equal(a.scaled, b.scaled)

    def test_sign_invariance(self):
        raw = np.array([[0.1, -0.4]])
        a = analysis.to_heatmap(raw)
        b = analysis.to_heatmap(-raw)
        np.testing.assert_array_equal(a.scaled, b.scaled)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            analysis.to_heatmap(np.zeros((2, 2)))

    def test_diff_identical_is_zero(self):
        hm = analysis.to_heatmap(np.array([[1.0, 0.3]]))
        assert analysis.heatmap_mean_abs_diff(hm, hm) == 0.0

    def test_diff_extremes_is_255(self):
        lo = analysis.HeatMap(raw=np.zeros((2, 2)), scaled=np.zeros((2, 2), np.uint8))
        hi = analysis.HeatMap(raw=np.ones((2, 2)), scaled=np.full((2, 2), 255, np.uint8))
        assert analysis.heatmap_mean_abs_diff(lo, hi) == 255.0

    def test_diff_shape_mismatch(self):
        a = analysis.to_heatmap(np.ones((2, 2)))
        b = analysis.to_heatmap(np.ones((2, 3)))
        with pytest.raises(ValueError):
            analysis.heatmap_mean_abs_diff(a, b)

    def test_pgm_round_trip(self, tmp_path):
        hm = analysis.to_heatmap(np.array([[0.5, -1.0, 0.25], [0.0, 0.1, 2.0]]))
        path = tmp_path / "map.pgm"
        analysis.write_heatmap_pgm(hm, path)
        back = analysis.read_pgm(path)
        np.testing.assert_array_equal(back, hm.scaled)


class TestExportEmbeddings:
    def test_row_count_and_dimension(self, game1, game4, tmp_path):
        specs = [game1, game4]
        student, _ = distill.build_student(specs, tiny_hp(), seed=0)
        out = tmp_path / "emb.csv"
        rows = analysis.export_word_embeddings(student, specs, out)
        assert rows == len(game1.vocab) + len(game4.vocab)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == rows + 1
        header = lines[0].split(",")
        assert header[:2] == ["word", "game_id"]
        assert len(header) == 2 + student.hidden_size

    def test_reexport_identical(self, game1, tmp_path):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=2)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        analysis.export_word_embeddings(net, [game1], p1)
        analysis.export_word_embeddings(net, [game1], p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_vector_matches_manual_lstm_step(self, game1):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=4)
        word = "apple"
        vec = analysis.word_output_vector(net, word)
        x = nn.Tensor(net.embedding.values[net.vocab_index[word]])
        h0 = nn.Tensor(np.zeros(net.hidden_size, dtype=net.dtype))
        c0 = nn.Tensor(np.zeros(net.hidden_size, dtype=net.dtype))
        h1, _ = nn.lstm_step(None, net.lstm, x, h0, c0)
        np.testing.assert_array_equal(vec, h1.values)


class TestTransferInitialize:
    def _source(self, spec, seed):
        net = agent.build_teacher_net(spec, tiny_hp(), seed=seed)
        return (spec.game_id, net.vocab_words, net.embedding.values)

    def test_disjoint_vocabulary_copies_nothing(self, game1):
        target = agent.build_teacher_net(game1, tiny_hp(), seed=0)
        fresh = target.embedding.values.copy()
        source = ("src", ["zzz", "qqq"], np.ones((2, tiny_hp().d_emb), np.float32))
        plan = analysis.TransferPlan(mode="single", sources=[source])
        report = analysis.transfer_initialize(plan, target)
        assert report["frozen_row_count"] == 0
        np.testing.assert_array_equal(target.embedding.values, fresh)

    def test_copied_rows_bitwise_and_frozen_through_updates(self, game1, game4):
        src = self._source(game1, seed=3)
        target = agent.build_teacher_net(game4, tiny_hp(), seed=0)
        plan = analysis.TransferPlan(mode="single", sources=[src])
        report = analysis.transfer_initialize(plan, target)
        overlap = set(game1.vocab.words) & set(game4.vocab.words)
        assert set(report["copied"]["game1"]) == overlap
        assert report["frozen_row_count"] == len(overlap)
        src_rows = {w: src[2][i] for i, w in enumerate(src[1])}
        for w in overlap:
            np.testing.assert_array_equal(
                target.embedding.values[target.vocab_index[w]], src_rows[w])
        rng = np.random.default_rng(0)
        for _ in range(1000):
            target.embedding.grad[:] = rng.standard_normal(target.embedding.values.shape)
            nn.sgd_update([target.embedding], lr=0.1)
        for w in overlap:
            np.testing.assert_array_equal(
                target.embedding.values[target.vocab_index[w]], src_rows[w])

    def test_random_mode_freezes_everything(self, game1):
        target = agent.build_teacher_net(game1, tiny_hp(), seed=0)
        plan = analysis.TransferPlan(mode="random", sources=[])
        report = analysis.transfer_initialize(plan, target)
        assert report["frozen_row_count"] == len(target.vocab_words)
        assert target.embedding.frozen_rows.all()

    def test_union_random_source_frequencies(self, game1):
        # a word present in all three sources is drawn from each ~1/3 of the time
        word = "you"
        sources = []
        for label in ("t1", "t2", "t3"):
            mat = np.full((1, tiny_hp().d_emb), hash(label) % 7 + 1.0, np.float32)
            sources.append((label, [word], mat))
        counts = {"t1": 0, "t2": 0, "t3": 0}
        for seed in range(300):
            target = agent.build_teacher_net(game1, tiny_hp(), seed=1)
            plan = analysis.TransferPlan(mode="union_random", sources=sources, seed=seed)
            report = analysis.transfer_initialize(plan, target)
            for label in counts:
                if report["copied"][label]:
                    counts[label] += 1
        expected = 300 / 3
        chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
        assert chi2 < stats.chi2.ppf(0.99, df=2)

    def test_width_mismatch_rejected(self, game1):
        target = agent.build_teacher_net(game1, tiny_hp(), seed=0)
        bad = ("src", ["you"], np.ones((1, 3), np.float32))
        plan = analysis.TransferPlan(mode="single", sources=[bad])
        with pytest.raises(ValueError, match="width"):
            analysis.transfer_initialize(plan, target)

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            analysis.TransferPlan(mode="bogus", sources=[])
        with pytest.raises(ValueError):
            analysis.TransferPlan(mode="single", sources=[])
        with pytest.raises(ValueError):
            analysis.TransferPlan(mode="random", sources=[("a", [], np.zeros((0, 2)))])
        with pytest.raises(ValueError):
            analysis.TransferPlan(mode="union_random", sources=[("a", [], np.zeros((0, 2)))])


class TestSampleStates:
    def test_count_and_determinism(self, game1):
        net = agent.build_teacher_net(game1, tiny_hp(), seed=0)
        a = analysis.sample_states(net, game1, count=30, seed=5)
        b = analysis.sample_states(net, game1, count=30, seed=5)
        assert len(a) == 30
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

"""Temporal components and full-pipeline composition."""

import numpy as np
import pytest

from slrkit import tensorlab as tl
from slrkit.errors import LengthError, ShapeError
from slrkit.model import ModelConfig, Pipeline, forward_pipeline
from slrkit.temporal import BiRnn, Bta, Head, TmcBlock, pooled_length


def tiny_config(**kw):
    base = dict(vocab_size=2, frame_h=8, frame_w=8, stage_channels=(4,),
                r=0.5, n_m=1, cue_dim=4, att_channels=4, tmc_width=8,
                rnn_hidden=4)
    base.update(kw)
    return ModelConfig(**base)


class TestHead:
    def test_rows_normalize(self):
        rng = np.random.default_rng(0)
        head = Head(6, 4, rng, dtype=np.float64)
        lp, _ = head.forward(rng.uniform(-1, 1, (5, 6)))
        assert np.allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-6)

    def test_matches_composed_ops(self):
        rng = np.random.default_rng(1)
        head = Head(6, 4, rng, dtype=np.float64)
        x = rng.uniform(-1, 1, (3, 6))
        lp, _ = head.forward(x)
        want = tl.log_softmax(tl.affine(x, head.weights, head.bias))
        assert np.array_equal(lp, want)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        head = Head(4, 3, rng, dtype=np.float64)
        x0 = rng.uniform(-1, 1, (3, 4))
        r = rng.uniform(-1, 1, (3, 3))

        def op(x, w, b):
            h = Head.__new__(Head)
            h.weights, h.bias = w, b
            lp, cache = h.forward(x)
            gx, grads = h.backward(cache, r)
            return float((lp * r).sum()), [gx, grads["weights"], grads["bias"]]

        rep = tl.finite_difference_check(op, [x0, head.weights, head.bias])
        assert rep.max_relative_error <= 1e-3


class TestBta:
    def make(self, rng, channels=5, dtype=np.float64):
        return Bta(channels, 4, 3, rng, dtype)

    def test_attention_in_unit_interval(self):
        rng = np.random.default_rng(2)
        bta = self.make(rng)
        x = rng.uniform(-3, 3, (9, 5))
        _, _, cache = bta.forward(x)
        att = cache[4]
        assert np.all(att >= 0.0) and np.all(att <= 1.0)

    def test_saturated_gate_reduces_to_plain_maxpool(self):
        rng = np.random.default_rng(3)
        bta = self.make(rng)
        bta.att2.weights[:] = 0.0
        bta.att2.bias[:] = 50.0  # sigmoid -> 1
        x = rng.uniform(-1, 1, (8, 5))
        pooled, _, _ = bta.forward(x)
        want = np.maximum(x[0::2], x[1::2])
        assert np.allclose(pooled, want, atol=1e-12)

    def test_annihilating_gate_drives_output_to_zero(self):
        rng = np.random.default_rng(4)
        bta = self.make(rng)
        bta.att2.weights[:] = 0.0
        bta.att2.bias[:] = -50.0  # sigmoid -> 0
        x = rng.uniform(-1, 1, (8, 5))
        pooled, _, _ = bta.forward(x)
        assert np.allclose(pooled, 0.0, atol=1e-18)

    def test_odd_length_duplicates_last_frame(self):
        rng = np.random.default_rng(5)
        bta = self.make(rng)
        x = rng.uniform(-1, 1, (7, 5))
        pooled, head_lp, _ = bta.forward(x)
        assert pooled.shape == (4, 5)
        assert head_lp.shape == (4, 3)
        assert pooled_length(7) == 4

    def test_too_short_raises(self):
        rng = np.random.default_rng(6)
        with pytest.raises(LengthError):
            self.make(rng).forward(np.zeros((1, 5)))

    @staticmethod
    def _safe_input(bta, rng, shape, margin=0.05):
        """Draw until the relu pre-activations and pooling gaps clear the
        finite-difference step by a wide margin (kinks break central
        differences)."""
        while True:
            x = rng.uniform(-1, 1, shape)
            _, _, cache = bta.forward(x)
            a1, att = cache[2], cache[4]
            gated = x * att[:, None]
            pairs = gated[0 : shape[0] // 2 * 2].reshape(-1, 2, shape[1])
            gap = np.abs(pairs[:, 0] - pairs[:, 1]).min()
            if np.abs(a1).min() > margin and gap > margin:
                return x

    @pytest.mark.parametrize("seed", range(20))
    def test_gradcheck_through_gate_and_pool(self, seed):
        rng = np.random.default_rng(seed)
        bta = self.make(rng, channels=3)
        x0 = self._safe_input(bta, rng, (6, 3))
        r_pool = rng.uniform(-1, 1, (3, 3))
        r_head = rng.uniform(-1, 1, (3, 3))
        names = list(bta.param_arrays().keys())

        def op(x, *arrays):
            for name, arr in zip(names, arrays):
                obj, attr = name.rsplit(".", 1) if "." in name else (None, name)
                if name.startswith("att1"):
                    setattr(bta.att1, name.split(".")[1], arr)
                elif name.startswith("att2"):
                    setattr(bta.att2, name.split(".")[1], arr)
                else:
                    setattr(bta.head, name.split(".")[1], arr)
            pooled, head_lp, cache = bta.forward(x)
            loss = float((pooled * r_pool).sum() + (head_lp * r_head).sum())
            gx, grads = bta.backward(cache, r_pool, r_head)
            return loss, [gx] + [grads[n] for n in names]

        inputs = [x0] + [arr.copy() for arr in bta.param_arrays().values()]
        rep = tl.finite_difference_check(op, inputs)
        assert rep.max_relative_error <= 1e-3


class TestTmcBlock:
    def make(self, rng, cues=3, dim=4, width=6, dtype=np.float64):
        return TmcBlock(cues, dim, width, 3, rng, dtype)

    def test_zero_cues_zero_bias_give_zero_paths(self):
        rng = np.random.default_rng(7)
        block = self.make(rng)
        for p in block.intra:
            p.bias[:] = 0
        block.inter.bias[:] = 0
        intra, inter, _, _ = block.forward(np.zeros((5, 3, 4)))
        assert not intra.any() and not inter.any()

    def test_per_cue_independence(self):
        rng = np.random.default_rng(8)
        block = self.make(rng)
        cues = rng.uniform(-1, 1, (5, 3, 4))
        intra, _, _, _ = block.forward(cues)
        moved = cues.copy()
        moved[:, 2, :] += 0.5  # perturb the hand cue only
        intra2, _, _, _ = block.forward(moved)
        assert np.array_equal(intra[:, 0], intra2[:, 0])
        assert np.array_equal(intra[:, 1], intra2[:, 1])
        assert not np.allclose(intra[:, 2], intra2[:, 2])

    def test_inter_path_matches_hand_concatenation(self):
        rng = np.random.default_rng(9)
        block = self.make(rng)
        cues = rng.uniform(-1, 1, (5, 3, 4))
        _, inter, _, _ = block.forward(cues)
        cat = np.ascontiguousarray(cues.reshape(5, -1).T)
        want = tl.conv1d(cat, block.inter).T
        assert np.array_equal(inter, want)

    def test_gradcheck(self):
        rng = np.random.default_rng(10)
        block = self.make(rng, cues=2, dim=3, width=4)
        cues0 = rng.uniform(-1, 1, (4, 2, 3))
        r_intra = rng.uniform(-1, 1, (4, 2, 3))
        r_inter = rng.uniform(-1, 1, (4, 4))
        r_head = rng.uniform(-1, 1, (4, 3))
        names = list(block.param_arrays().keys())

        def op(cues, *arrays):
            for name, arr in zip(names, arrays):
                part, attr = name.split(".")
                if part.startswith("intra"):
                    setattr(block.intra[int(part[5:])], attr, arr)
                elif part == "inter":
                    setattr(block.inter, attr, arr)
                else:
                    setattr(block.head, attr, arr)
            intra, inter, head_lp, cache = block.forward(cues)
            loss = float((intra * r_intra).sum() + (inter * r_inter).sum()
                         + (head_lp * r_head).sum())
            g_cues, grads = block.backward(cache, r_intra, r_inter, r_head)
            return loss, [g_cues] + [grads[n] for n in names]

        inputs = [cues0] + [arr.copy() for arr in block.param_arrays().values()]
        assert tl.finite_difference_check(op, inputs).max_relative_error <= 1e-3


class TestBiRnn:
    def test_single_step_symmetry_with_mirrored_weights(self):
        rng = np.random.default_rng(11)
        rnn = BiRnn(3, 4, rng, dtype=np.float64)
        rnn.wb[:] = rnn.wf
        rnn.ub[:] = rnn.uf
        rnn.bb[:] = rnn.bf
        out, _ = rnn.forward(rng.uniform(-1, 1, (1, 3)))
        assert np.allclose(out[0, :4], out[0, 4:], atol=1e-12)

    def test_zero_everything_gives_zero(self):
        rng = np.random.default_rng(12)
        rnn = BiRnn(3, 4, rng, dtype=np.float64)
        rnn.bf[:] = 0
        rnn.bb[:] = 0
        out, _ = rnn.forward(np.zeros((5, 3)))
        assert not out.any()

    def test_output_shape(self):
        rng = np.random.default_rng(13)
        rnn = BiRnn(6, 5, rng, dtype=np.float64)
        out, _ = rnn.forward(rng.uniform(-1, 1, (9, 6)))
        assert out.shape == (9, 10)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        rnn = BiRnn(3, 2, rng, dtype=np.float64)
        x0 = rng.uniform(-1, 1, (4, 3))
        r = rng.uniform(-1, 1, (4, 4))
        names = list(rnn.param_arrays().keys())

        def op(x, *arrays):
            for name, arr in zip(names, arrays):
                setattr(rnn, name, arr)
            y, cache = rnn.forward(x)
            gx, grads = rnn.backward(cache, r)
            return float((y * r).sum()), [gx] + [grads[n] for n in names]

        inputs = [x0] + [arr.copy() for arr in rnn.param_arrays().values()]
        assert tl.finite_difference_check(op, inputs).max_relative_error <= 1e-3


class TestPipeline:
    def test_length_bookkeeping_with_bta(self):
        rng = np.random.default_rng(14)
        model = Pipeline(tiny_config(), np.random.default_rng(0))
        for t_len in (4, 5, 7):
            video = rng.uniform(0, 1, (t_len, 3, 8, 8)).astype(np.float32)
            out = forward_pipeline(video, model)
            want = pooled_length(t_len)
            assert out.inter_logprobs.shape == (want, 3)
            assert out.latent_logprobs.shape == (want, 3)
            assert all(lp.shape == (want, 3) for lp in out.intra_logprobs)
            assert len(out.bta_logprobs) == 3  # bottleneck + one per block

    def test_length_without_bta(self):
        rng = np.random.default_rng(15)
        model = Pipeline(tiny_config(bta=False), np.random.default_rng(0))
        video = rng.uniform(0, 1, (5, 3, 8, 8)).astype(np.float32)
        out = forward_pipeline(video, model)
        assert out.inter_logprobs.shape == (5, 3)
        assert out.bta_logprobs == []

    def test_single_cue_baseline(self):
        rng = np.random.default_rng(16)
        model = Pipeline(tiny_config(dfconv=False), np.random.default_rng(0))
        video = rng.uniform(0, 1, (4, 3, 8, 8)).astype(np.float32)
        out = forward_pipeline(video, model)
        assert len(out.intra_logprobs) == 1
        names = model.params()
        assert not any("nonmanual" in n or "lower" in n for n in names)

    def test_all_outputs_normalized(self):
        rng = np.random.default_rng(17)
        model = Pipeline(tiny_config(), np.random.default_rng(3))
        video = rng.uniform(0, 1, (6, 3, 8, 8)).astype(np.float32)
        out = forward_pipeline(video, model)
        for lp in ([out.inter_logprobs, out.latent_logprobs]
                   + out.intra_logprobs + out.bta_logprobs):
            assert np.allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-6)

    def test_rejects_wrong_video_shape(self):
        model = Pipeline(tiny_config(), np.random.default_rng(0))
        with pytest.raises(ShapeError):
            model.forward(np.zeros((4, 1, 8, 8), dtype=np.float32))

    def test_forward_deterministic(self):
        rng = np.random.default_rng(18)
        model = Pipeline(tiny_config(), np.random.default_rng(7))
        video = rng.uniform(0, 1, (5, 3, 8, 8)).astype(np.float32)
        a = forward_pipeline(video, model)
        b = forward_pipeline(video, model)
        assert np.array_equal(a.inter_logprobs, b.inter_logprobs)
        assert np.array_equal(a.latent_logprobs, b.latent_logprobs)

"""Block tests. The two attention branches are checked against independent
oracles: a nested-loop neighborhood attention for DN-CA (zero offsets) and
the explicit quadratic-form attention for PAL-CA's kernel rearrangement."""

import numpy as np
import pytest

from unilvc import blocks
from unilvc import tensor_core as tc
from unilvc.blocks import AttentionWeights, DcBlockWeights, cross_attn, dc_block, dn_ca, pal_ca
from unilvc.errors import InvalidArgument


def make_dc_weights(rng, c, ratio=2, groups=4, scale=0.3, zero=False):
    def t(*shape):
        if zero:
            return np.zeros(shape, dtype=np.float32)
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    return DcBlockWeights(
        dw_kernel=t(c, 3, 3),
        mlp_w1=t(c * ratio, c), mlp_b1=t(c * ratio),
        mlp_w2=t(c, c * ratio), mlp_b2=t(c),
        shuffle_groups=groups,
    )


def make_attn_weights(rng, c, heads=2, k=5, scale=0.4, zero=False, zero_offsets=False):
    d = c // heads

    def t(*shape, force_zero=False):
        if zero or force_zero:
            return np.zeros(shape, dtype=np.float32)
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    gamma = np.ones(2 * c, dtype=np.float32) if zero else \
        rng.uniform(0.5, 2.0, 2 * c).astype(np.float32)
    return AttentionWeights(
        wq=t(c, c), wk=t(c, c), wv=t(c, c),
        offset_dw=t(heads, 2 * d, 3, 3, force_zero=zero_offsets),
        offset_w=t(heads, 2 * k * k, 2 * d, force_zero=zero_offsets),
        offset_b=t(heads, 2 * k * k, force_zero=zero_offsets),
        wqg=t(c, c), wkg=t(c, c), wvg=t(c, c), wg=t(c, c),
        gamma=gamma, heads=heads, k=k,
    )


# ------------------------------------------------------------------ oracles

def neighborhood_attention_oracle(f_cur, f_ref, w):
    """Plain k x k cross-attention with border clamping, nested loops.

    Independent of the bilinear/deformable path; valid reference for DN-CA
    when the offset net outputs zeros. Returns (output, per-head sampled
    value stacks) so convexity can be checked too.
    """
    n, c, h, wd = f_cur.shape
    heads, k = w.heads, w.k
    d = c // heads
    half = k // 2
    q = tc.linear_mix(f_cur, w.wq).astype(np.float64)
    key = tc.linear_mix(f_ref, w.wk).astype(np.float64)
    val = tc.linear_mix(f_ref, w.wv).astype(np.float64)
    out = np.zeros((n, c, h, wd))
    samples = np.zeros((n, heads, d, h, wd, k * k))
    for b in range(n):
        for hi in range(heads):
            sl = slice(hi * d, (hi + 1) * d)
            for i in range(h):
                for j in range(wd):
                    qv = q[b, sl, i, j]
                    ks, vs = [], []
                    for di in range(-half, half + 1):
                        for dj in range(-half, half + 1):
                            ii = min(max(i + di, 0), h - 1)
                            jj = min(max(j + dj, 0), wd - 1)
                            ks.append(key[b, sl, ii, jj])
                            vs.append(val[b, sl, ii, jj])
                    ks = np.stack(ks)          # (k*k, d)
                    vs = np.stack(vs)
                    logits = ks @ qv / np.sqrt(d)
                    e = np.exp(logits - logits.max())
                    aw = e / e.sum()
                    out[b, sl, i, j] = aw @ vs
                    samples[b, hi, :, i, j, :] = vs.T
    return out, samples


def quadratic_pal_oracle(f_cur, f_ref, w):
    """Explicit quadratic-form softmax-free attention, one loop per query.

    O_ij = sum_m phi_q(i) . phi_k(m) v(m) / (sum_m phi_q(i) . phi_k(m) + eps),
    evaluated per head with the same polarity decomposition and gating.
    """
    n, c, h, wd = f_cur.shape
    heads = w.heads
    d = c // heads
    dv = d // 2
    eps = float(blocks.ATTN_DENOM_FLOOR)
    qg = tc.linear_mix(f_cur, w.wqg).reshape(n, c, h * wd).astype(np.float64)
    kg = tc.linear_mix(f_ref, w.wkg).reshape(n, c, h * wd).astype(np.float64)
    vg = tc.linear_mix(f_ref, w.wvg).reshape(n, c, h * wd).astype(np.float64)
    gate = tc.linear_mix(f_cur, w.wg).reshape(n, c, h * wd).astype(np.float64)
    out = np.zeros((n, c, h * wd))
    for b in range(n):
        for hi in range(heads):
            sl = slice(hi * d, (hi + 1) * d)
            gamma = w.gamma[hi * 2 * d:(hi + 1) * 2 * d].astype(np.float64)
            qh, kh = qg[b, sl].T, kg[b, sl].T          # (hw, d)
            vh, gh = vg[b, sl].T, gate[b, sl].T
            phi_q = np.concatenate([np.maximum(qh, 0), np.maximum(-qh, 0)], 1) ** gamma
            phi_ks = np.concatenate([np.maximum(kh, 0), np.maximum(-kh, 0)], 1) ** gamma
            phi_ko = np.concatenate([np.maximum(-kh, 0), np.maximum(kh, 0)], 1) ** gamma
            for i in range(h * wd):
                sim_s = phi_ks @ phi_q[i]              # (hw,)
                sim_o = phi_ko @ phi_q[i]
                os_ = (sim_s @ vh[:, :dv]) / (sim_s.sum() + eps)
                oo_ = (sim_o @ vh[:, dv:]) / (sim_o.sum() + eps)
                out[b, sl, i][:dv] = gh[i, :dv] * os_
                out[b, sl, i][dv:] = gh[i, dv:] * oo_
    return out.reshape(n, c, h, wd)


# ------------------------------------------------------------------ DC block

class TestDcBlock:
    def test_zero_weights_exact_identity(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal((1, 16, 6, 6)).astype(np.float32)
        w = make_dc_weights(rng, 16, zero=True)
        assert np.array_equal(dc_block(t, w), t)

    def test_composition_matches_kernel_oracles(self):
        rng = np.random.default_rng(1)
        t = rng.standard_normal((1, 16, 5, 5)).astype(np.float32)
        w = make_dc_weights(rng, 16)
        u = t + tc.depthwise_conv(tc.spatial_shift(t), w.dw_kernel, 1, 1)
        v = tc.channel_shuffle(u, w.shuffle_groups)
        m = tc.linear_mix(tc.wsilu(tc.linear_mix(v, w.mlp_w1, w.mlp_b1)), w.mlp_w2, w.mlp_b2)
        np.testing.assert_array_equal(dc_block(t, w), u + m)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        t = rng.standard_normal((1, 16, 4, 4)).astype(np.float32)
        w = make_dc_weights(rng, 16)
        assert dc_block(t, w).tobytes() == dc_block(t, w).tobytes()

    def test_channel_count_errors_propagate(self):
        rng = np.random.default_rng(3)
        w = make_dc_weights(rng, 16)
        with pytest.raises(InvalidArgument):
            dc_block(rng.standard_normal((1, 12, 4, 4)).astype(np.float32), w)


# ------------------------------------------------------------------ DN-CA

class TestDnCa:
    @pytest.mark.parametrize("c,heads,h,wd", [(8, 1, 6, 6), (16, 2, 7, 5), (8, 2, 5, 8)])
    def test_zero_offset_matches_neighborhood_oracle(self, c, heads, h, wd):
        rng = np.random.default_rng(c * h + wd)
        w = make_attn_weights(rng, c, heads, zero_offsets=True)
        f_cur = rng.standard_normal((1, c, h, wd)).astype(np.float32)
        f_ref = rng.standard_normal((1, c, h, wd)).astype(np.float32)
        got = dn_ca(f_cur, f_ref, w)
        ref, samples = neighborhood_attention_oracle(f_cur, f_ref, w)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-5)
        # convexity: outputs inside the sampled value range per head/location
        d = c // heads
        for hi in range(heads):
            sl = slice(hi * d, (hi + 1) * d)
            lo = samples[:, hi].min(axis=-1)
            hi_ = samples[:, hi].max(axis=-1)
            assert np.all(got[:, sl] >= lo - 1e-5)
            assert np.all(got[:, sl] <= hi_ + 1e-5)

    def test_direct_path_matches_oracle_too(self, monkeypatch):
        # force the large-grid gather path and check it against the same oracle
        monkeypatch.setattr(blocks, "DOT_PATH_MAX_POSITIONS", 0)
        rng = np.random.default_rng(55)
        w = make_attn_weights(rng, 8, 2, zero_offsets=True)
        f_cur = rng.standard_normal((1, 8, 6, 5)).astype(np.float32)
        f_ref = rng.standard_normal((1, 8, 6, 5)).astype(np.float32)
        got = dn_ca(f_cur, f_ref, w)
        ref, _ = neighborhood_attention_oracle(f_cur, f_ref, w)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-5)

    def test_both_paths_agree_with_offsets(self, monkeypatch):
        rng = np.random.default_rng(56)
        w = make_attn_weights(rng, 8, 2)
        f_cur = rng.standard_normal((1, 8, 6, 6)).astype(np.float32)
        f_ref = rng.standard_normal((1, 8, 6, 6)).astype(np.float32)
        small = dn_ca(f_cur, f_ref, w)
        monkeypatch.setattr(blocks, "DOT_PATH_MAX_POSITIONS", 0)
        direct = dn_ca(f_cur, f_ref, w)
        np.testing.assert_allclose(small, direct, rtol=1e-4, atol=1e-5)

    def test_constant_reference_gives_constant_output(self):
        rng = np.random.default_rng(9)
        w = make_attn_weights(rng, 8, 2)
        f_cur = rng.standard_normal((1, 8, 6, 6)).astype(np.float32)
        f_ref = np.full((1, 8, 6, 6), 0.37, np.float32)
        out = dn_ca(f_cur, f_ref, w)
        spread = out.reshape(8, -1).max(axis=1) - out.reshape(8, -1).min(axis=1)
        assert spread.max() < 1e-5

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(10)
        w = make_attn_weights(rng, 8, 2)
        f_cur = rng.standard_normal((1, 8, 6, 6)).astype(np.float32)
        f_ref = rng.standard_normal((1, 8, 6, 6)).astype(np.float32)
        _, attns = dn_ca(f_cur, f_ref, w, return_attention=True)
        for aw in attns:
            np.testing.assert_allclose(aw.sum(axis=-1), 1.0, atol=1e-6)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(11)
        w = make_attn_weights(rng, 8)
        with pytest.raises(InvalidArgument):
            dn_ca(np.zeros((1, 8, 4, 4), np.float32), np.zeros((1, 8, 5, 4), np.float32), w)


# ------------------------------------------------------------------ PAL-CA

class TestPalCa:
    @pytest.mark.parametrize("c,heads,h,wd", [(8, 1, 4, 4), (8, 2, 6, 5), (16, 2, 8, 8)])
    def test_matches_quadratic_oracle(self, c, heads, h, wd):
        rng = np.random.default_rng(c + heads)
        w = make_attn_weights(rng, c, heads)
        f_cur = rng.standard_normal((1, c, h, wd)).astype(np.float32)
        f_ref = rng.standard_normal((1, c, h, wd)).astype(np.float32)
        got = pal_ca(f_cur, f_ref, w)
        ref = quadratic_pal_oracle(f_cur, f_ref, w)
        np.testing.assert_allclose(got, ref, rtol=1e-4, atol=1e-5)

    def test_gamma_one_nonnegative_inputs(self):
        # with gamma = 1 and all-nonnegative projections, Q- = K- = 0; the
        # opposite-sign path sees the swapped concatenation [K-, K+]
        rng = np.random.default_rng(21)
        c, heads = 8, 2
        w = make_attn_weights(rng, c, heads)
        w = AttentionWeights(
            wq=w.wq, wk=w.wk, wv=w.wv,
            offset_dw=w.offset_dw, offset_w=w.offset_w, offset_b=w.offset_b,
            wqg=np.abs(w.wqg), wkg=np.abs(w.wkg), wvg=w.wvg, wg=w.wg,
            gamma=np.ones(2 * c, np.float32), heads=heads, k=w.k,
        )
        f_cur = np.abs(rng.standard_normal((1, c, 5, 5))).astype(np.float32)
        f_ref = np.abs(rng.standard_normal((1, c, 5, 5))).astype(np.float32)
        got = pal_ca(f_cur, f_ref, w)
        ref = quadratic_pal_oracle(f_cur, f_ref, w)
        np.testing.assert_allclose(got, ref, rtol=1e-4, atol=1e-5)

    def test_zero_gate_zero_output(self):
        rng = np.random.default_rng(22)
        c = 8
        w = make_attn_weights(rng, c)
        w = AttentionWeights(
            wq=w.wq, wk=w.wk, wv=w.wv,
            offset_dw=w.offset_dw, offset_w=w.offset_w, offset_b=w.offset_b,
            wqg=w.wqg, wkg=w.wkg, wvg=w.wvg, wg=np.zeros_like(w.wg),
            gamma=w.gamma, heads=w.heads, k=w.k,
        )
        f = rng.standard_normal((1, c, 4, 4)).astype(np.float32)
        assert np.array_equal(pal_ca(f, f, w), np.zeros_like(f))

    def test_degenerate_keys_do_not_blow_up(self):
        rng = np.random.default_rng(23)
        w = make_attn_weights(rng, 8)
        f_cur = rng.standard_normal((1, 8, 4, 4)).astype(np.float32)
        out = pal_ca(f_cur, np.zeros((1, 8, 4, 4), np.float32), w)
        assert np.isfinite(out).all()


# ------------------------------------------------------------------ combined

class TestCrossAttn:
    def test_zero_weights_residual_passthrough(self):
        rng = np.random.default_rng(30)
        w = make_attn_weights(rng, 8, zero=True)
        f_cur = rng.standard_normal((1, 8, 5, 5)).astype(np.float32)
        f_ref = rng.standard_normal((1, 8, 5, 5)).astype(np.float32)
        np.testing.assert_array_equal(cross_attn(f_cur, f_ref, w), f_cur)

    def test_equals_sum_of_branches(self):
        rng = np.random.default_rng(31)
        w = make_attn_weights(rng, 8, 2)
        f_cur = rng.standard_normal((1, 8, 5, 5)).astype(np.float32)
        f_ref = rng.standard_normal((1, 8, 5, 5)).astype(np.float32)
        got = cross_attn(f_cur, f_ref, w)
        ref = f_cur + dn_ca(f_cur, f_ref, w) + pal_ca(f_cur, f_ref, w)
        np.testing.assert_array_equal(got, ref)

    def test_bitwise_repeatable(self):
        rng = np.random.default_rng(32)
        w = make_attn_weights(rng, 8, 2)
        f_cur = rng.standard_normal((1, 8, 6, 6)).astype(np.float32)
        f_ref = rng.standard_normal((1, 8, 6, 6)).astype(np.float32)
        assert cross_attn(f_cur, f_ref, w).tobytes() == cross_attn(f_cur, f_ref, w).tobytes()


def test_clamp_gamma():
    g = np.array([0.01, 0.5, 3.0, 99.0], np.float32)
    np.testing.assert_array_equal(blocks.clamp_gamma(g), [0.25, 0.5, 3.0, 4.0])

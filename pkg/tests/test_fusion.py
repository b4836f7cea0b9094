"""Regional fusion math: attention scores, dynamic mask, fusion, block policy."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifesim import kernels
from lifesim.errors import ShapeError, ValidationError
from lifesim.fusion import (
    BlockPolicy,
    FusionConfig,
    ProjectionPair,
    apply_block,
    char_attention,
    demo_report,
    dynamic_mask,
    fuse,
    mask_cardinality,
    reference_oracle,
)
from lifesim.kernels import pyfallback


# -- config and policy -------------------------------------------------------------


def test_config_defaults():
    cfg = FusionConfig()
    assert cfg.r_percent == 60.0
    assert cfg.alpha_e == 1.0 and cfg.alpha_c == 1.0
    assert cfg.char_token_reduction == "mean"
    assert cfg.softmax_scores is False


@pytest.mark.parametrize(
    "kwargs",
    [
        {"r_percent": 0},
        {"r_percent": 101},
        {"alpha_e": -0.5},
        {"alpha_c": -1},
        {"char_token_reduction": "median"},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        FusionConfig(**kwargs)


def test_block_policy_defaults_drop_down_blocks():
    policy = BlockPolicy()
    assert policy.mode_for("down") == "no_environment"
    assert policy.mode_for("mid") == "regional"
    assert policy.mode_for("up") == "regional"
    with pytest.raises(ValidationError):
        policy.mode_for("side")
    with pytest.raises(ValidationError):
        BlockPolicy(down="sometimes")


# -- char_attention -----------------------------------------------------------------


def test_char_attention_hand_example_d1():
    proj = ProjectionPair.identity(1)
    scores = char_attention([[2.0], [0.0]], [[3.0]], proj)
    assert scores.tolist() == [6.0, 0.0]


def test_char_attention_zero_tokens_give_zero_scores():
    proj = ProjectionPair.identity(4)
    o_t = np.arange(12.0).reshape(3, 4)
    k_c = np.zeros((2, 4))
    assert char_attention(o_t, k_c, proj).tolist() == [0.0, 0.0, 0.0]


def test_char_attention_mean_and_max_reduction():
    proj = ProjectionPair.identity(1)
    o_t = [[1.0]]
    k_c = [[4.0], [2.0]]  # per-token scores [4, 2]
    assert char_attention(o_t, k_c, proj, FusionConfig()).tolist() == [3.0]
    assert char_attention(
        o_t, k_c, proj, FusionConfig(char_token_reduction="max")
    ).tolist() == [4.0]


def test_char_attention_scales_by_sqrt_dk():
    # ones everywhere: dot product d, scaled by 1/sqrt(d)
    d = 16
    proj = ProjectionPair.identity(d)
    scores = char_attention(np.ones((2, d)), np.ones((1, d)), proj)
    assert scores == pytest.approx([np.sqrt(d)] * 2)


def test_char_attention_shape_errors_name_shapes():
    proj = ProjectionPair.identity(4)
    with pytest.raises(ShapeError) as excinfo:
        char_attention(np.ones((2, 3)), np.ones((1, 4)), proj)
    assert "(2, 3)" in str(excinfo.value)
    with pytest.raises(ShapeError):
        char_attention(np.ones((2, 4)), np.ones((1, 3)), proj)


def test_char_attention_rejects_non_finite():
    proj = ProjectionPair.identity(2)
    bad = np.array([[1.0, np.nan]])
    with pytest.raises(ValidationError):
        char_attention(bad, np.ones((1, 2)), proj)


def test_projection_pair_checks_projected_width():
    with pytest.raises(ShapeError):
        ProjectionPair(w_q=np.ones((4, 3)), w_k=np.ones((4, 2)))


def test_softmax_toggle_produces_distributions():
    proj = ProjectionPair.identity(3)
    rng = np.random.default_rng(0)
    scores = char_attention(
        rng.normal(size=(5, 3)),
        rng.normal(size=(4, 3)),
        proj,
        FusionConfig(softmax_scores=True, char_token_reduction="max"),
    )
    assert scores.shape == (5,)
    assert np.all(scores > 0) and np.all(scores <= 1)


# -- mask --------------------------------------------------------------------------


def test_mask_cardinality_rounds_half_up():
    assert mask_cardinality(10, 60) == 6
    assert mask_cardinality(1, 50) == 1  # 0.5 rounds up, not to even
    assert mask_cardinality(5, 50) == 3  # 2.5 -> 3
    assert mask_cardinality(10, 25) == 3  # 2.5 -> 3
    assert mask_cardinality(10, 100) == 10
    assert mask_cardinality(4, 10) == 0  # 0.4 -> 0


def test_mask_spec_example_scores_1_to_10():
    scores = list(range(1, 11))  # position i has score i+1
    mask = dynamic_mask(scores, 60)
    # k=6: scores 5..10 (indices 4..9) are the character region
    assert mask.tolist() == [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]


def test_mask_tie_rule_prefers_lower_index():
    mask = dynamic_mask([7.0, 7.0, 7.0, 7.0], 50)
    assert mask.tolist() == [0, 0, 1, 1]


def test_mask_r100_is_all_character():
    assert dynamic_mask([3.0, 1.0, 2.0], 100).tolist() == [0, 0, 0]


def test_mask_orientation_flag_flips_regions():
    scores = [5.0, 1.0, 4.0, 2.0, 3.0]
    normal = dynamic_mask(scores, 40)
    flipped = dynamic_mask(scores, 40, top_is_character=False)
    assert (normal + flipped).tolist() == [1.0] * 5


def test_mask_input_validation():
    with pytest.raises(ValidationError):
        dynamic_mask([], 60)
    with pytest.raises(ValidationError):
        dynamic_mask([1.0, np.inf], 60)
    with pytest.raises(ValidationError):
        dynamic_mask([1.0], 0)


@settings(max_examples=200, deadline=None)
@given(
    scores=st.lists(
        st.integers(min_value=-1000, max_value=1000), min_size=1, max_size=4096
    ),
    r=st.floats(min_value=0.5, max_value=100.0, allow_nan=False),
)
def test_mask_binary_with_exact_cardinality(scores, r):
    mask = dynamic_mask(scores, r)
    n = len(scores)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert int((mask == 0.0).sum()) == mask_cardinality(n, r)
    assert mask.shape == (n,)


@settings(max_examples=200, deadline=None)
@given(
    scores=st.lists(
        st.integers(min_value=-1000, max_value=1000), min_size=1, max_size=256
    ),
    r=st.floats(min_value=0.5, max_value=100.0, allow_nan=False),
    c=st.floats(min_value=0.1, max_value=10.0, allow_nan=False),
    b=st.floats(min_value=-100.0, max_value=100.0, allow_nan=False),
)
def test_mask_scale_equivariant_under_positive_affine(scores, r, c, b):
    base = np.asarray(scores, dtype=np.float64)
    assert dynamic_mask(base, r).tolist() == dynamic_mask(c * base + b, r).tolist()


# -- fuse --------------------------------------------------------------------------


def _random_triple(n: int = 8, d: int = 16, seed: int = 3):
    rng = np.random.default_rng(seed)
    return (
        rng.normal(size=(n, d)),
        rng.normal(size=(n, d)),
        rng.normal(size=(n, d)),
        (rng.random(n) < 0.5).astype(np.float64),
    )


def test_fuse_zero_scales_is_identity():
    o_t, o_e, o_c, mask = _random_triple()
    out = fuse(o_t, o_e, o_c, mask, FusionConfig(alpha_e=0.0, alpha_c=0.0))
    assert np.array_equal(out, o_t)


def test_fuse_saturated_mask_adds_environment():
    o_t, o_e, o_c, _ = _random_triple()
    out = fuse(o_t, o_e, o_c, np.ones(o_t.shape[0]), FusionConfig(alpha_e=1.0, alpha_c=1.0))
    assert np.allclose(out, o_t + o_e, atol=0, rtol=0)


def test_fuse_hand_example_two_rows():
    out = fuse(
        [[1.0], [1.0]],
        [[10.0], [10.0]],
        [[100.0], [100.0]],
        [1.0, 0.0],
        FusionConfig(alpha_e=0.5, alpha_c=2.0),
    )
    assert out.tolist() == [[6.0], [201.0]]


def test_fuse_matches_oracle_8x16():
    o_t, o_e, o_c, mask = _random_triple(8, 16)
    cfg = FusionConfig(alpha_e=0.7, alpha_c=1.3)
    got = fuse(o_t, o_e, o_c, mask, cfg)
    want = reference_oracle(o_t, o_e, o_c, mask, cfg)
    assert np.max(np.abs(got - want)) < 1e-9


def test_fuse_linear_in_adapter_outputs():
    o_t, e1, o_c, mask = _random_triple(6, 5, seed=9)
    e2 = np.random.default_rng(10).normal(size=e1.shape)
    cfg = FusionConfig(alpha_e=0.8, alpha_c=1.1)
    zero = np.zeros_like(e1)
    combined = fuse(o_t, e1 + e2, o_c, mask, cfg)
    split = fuse(o_t, e1, o_c, mask, cfg) + fuse(o_t, e2, o_c, mask, cfg) - fuse(o_t, zero, o_c, mask, cfg)
    assert np.max(np.abs(combined - split)) < 1e-12


def test_fuse_validates_mask_and_shapes():
    o_t, o_e, o_c, _ = _random_triple(4, 3)
    with pytest.raises(ValidationError):
        fuse(o_t, o_e, o_c, [0.5, 0, 1, 1], FusionConfig())
    with pytest.raises(ShapeError):
        fuse(o_t, o_e, o_c, [0, 1], FusionConfig())
    with pytest.raises(ShapeError):
        fuse(o_t, o_e[:2], o_c, [0, 1, 1, 0], FusionConfig())


def test_oracle_trivial_cases():
    cfg = FusionConfig()
    zeros = np.zeros((3, 2))
    assert np.array_equal(reference_oracle(zeros, zeros, zeros, [1, 0, 1], cfg), zeros)
    o_t = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(reference_oracle(o_t, zeros, zeros, [1, 0, 1], cfg), o_t)


# -- apply_block ---------------------------------------------------------------------


def test_down_block_ignores_environment_bitwise():
    o_t, o_e, o_c, _ = _random_triple(10, 6, seed=4)
    k_c = np.random.default_rng(5).normal(size=(3, 6))
    proj = ProjectionPair.identity(6)
    cfg = FusionConfig(alpha_c=0.9)
    base = apply_block("down", o_t, o_e, o_c, k_c, proj, cfg)
    for scale in (0.0, -7.5, 1e6):
        perturbed = apply_block("down", o_t, o_e * scale + 3.0, o_c, k_c, proj, cfg)
        assert np.array_equal(base, perturbed)
    assert np.allclose(base, o_t + 0.9 * o_c, atol=0, rtol=0)


def test_mid_block_zero_scales_returns_hidden_states():
    o_t, o_e, o_c, _ = _random_triple(5, 4, seed=6)
    k_c = np.random.default_rng(7).normal(size=(2, 4))
    out = apply_block(
        "mid", o_t, o_e, o_c, k_c, ProjectionPair.identity(4), FusionConfig(alpha_e=0, alpha_c=0)
    )
    assert np.array_equal(out, o_t)


def test_up_block_equals_manual_composition():
    o_t, o_e, o_c, _ = _random_triple(12, 8, seed=8)
    k_c = np.random.default_rng(9).normal(size=(4, 8))
    proj = ProjectionPair.identity(8)
    cfg = FusionConfig(r_percent=45, alpha_e=0.6, alpha_c=1.4)
    got = apply_block("up", o_t, o_e, o_c, k_c, proj, cfg)
    scores = char_attention(o_t, k_c, proj, cfg)
    mask = dynamic_mask(scores, cfg.r_percent, top_is_character=cfg.top_is_character)
    want = fuse(o_t, o_e, o_c, mask, cfg)
    assert np.array_equal(got, want)


def test_policy_override_changes_block_mode():
    o_t, o_e, o_c, _ = _random_triple(6, 4, seed=11)
    k_c = np.random.default_rng(12).normal(size=(2, 4))
    proj = ProjectionPair.identity(4)
    cfg = FusionConfig()
    policy = BlockPolicy(down="regional", mid="no_environment", up="regional")
    down = apply_block("down", o_t, o_e, o_c, k_c, proj, cfg, policy)
    mid = apply_block("mid", o_t, o_e, o_c, k_c, proj, cfg, policy)
    assert np.array_equal(mid, o_t + o_c)  # alpha_c defaults to 1
    # regional down now depends on o_e
    down2 = apply_block("down", o_t, o_e + 1.0, o_c, k_c, proj, cfg, policy)
    assert not np.array_equal(down, down2)


def test_mask_recomputed_from_each_blocks_states():
    _, o_e, o_c, _ = _random_triple(8, 4, seed=13)
    k_c = np.random.default_rng(14).normal(size=(2, 4))
    proj = ProjectionPair.identity(4)
    cfg = FusionConfig()
    rng = np.random.default_rng(15)
    a = apply_block("mid", rng.normal(size=(8, 4)), o_e, o_c, k_c, proj, cfg)
    b = apply_block("mid", rng.normal(size=(8, 4)), o_e, o_c, k_c, proj, cfg)
    assert not np.array_equal(a, b)


# -- kernel backend parity -------------------------------------------------------------


def test_backend_is_reported():
    assert kernels.BACKEND in ("native", "fallback")


@pytest.mark.skipif(kernels.BACKEND != "native", reason="no compiled extension to compare")
def test_native_and_fallback_agree():
    rng = np.random.default_rng(42)
    for _ in range(20):
        n, m = int(rng.integers(0, 30)), int(rng.integers(0, 30))
        a = rng.integers(0, 8, size=n).tolist()
        b = rng.integers(0, 8, size=m).tolist()
        assert kernels.lcs_length(a, b) == pyfallback.lcs_length(a, b)

    q = rng.normal(size=(7, 5))
    k = rng.normal(size=(3, 5))
    assert np.array_equal(kernels.scaled_scores(q, k, 0.37), pyfallback.scaled_scores(q, k, 0.37))

    o_t, o_e, o_c = rng.normal(size=(3, 6, 4))
    mask = (rng.random(6) < 0.5).astype(np.float64)
    assert np.array_equal(
        kernels.fuse_rows(o_t, o_e, o_c, mask, 0.8, 1.2),
        pyfallback.fuse_rows(o_t, o_e, o_c, mask, 0.8, 1.2),
    )


def test_demo_report_mentions_backend_and_cardinality():
    report = demo_report(n=10, d=8, r_percent=60, seed=7)
    assert "k = round(n*r/100) = 6" in report
    assert kernels.BACKEND in report

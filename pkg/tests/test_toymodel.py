import numpy as np
import pytest

from kvstyle.attention import MaskSpec
from kvstyle.decoder import generate
from kvstyle.diagnostics import attention_variance
from kvstyle.embedding import compute_direction, interpolate
from kvstyle.experiments import DEFAULT_KS, DEFAULT_WINDOWS, run_toy_transition
from kvstyle.toymodel import (
    COMMIT_LEAK,
    LEVELS,
    AttributeReading,
    StyleClass,
    ToyConfig,
    attribute_of,
    build_toy_model,
    dequantize,
    encode_style,
    oracle_tokens,
    oracle_trajectory,
    quantize,
    sign_class,
    style_attribute,
    style_prompt_ids,
)
from kvstyle.transition import TransitionPlan


def _plan(**overrides) -> TransitionPlan:
    values = {"t_star": 64, "k": 4, "window": 8, "alpha": 2.0, "steps": 128}
    values.update(overrides)
    return TransitionPlan(**values)


def test_config_validation():
    with pytest.raises(ValueError, match="commit_len"):
        ToyConfig(commit_len=0)
    with pytest.raises(ValueError, match="attr_channel"):
        ToyConfig(attr_channel=16)
    with pytest.raises(ValueError, match="attr_pos"):
        ToyConfig(attr_pos=8)
    with pytest.raises(ValueError, match="dim"):
        ToyConfig(dim=6, attr_channel=0)
    with pytest.raises(ValueError, match="Unknown toy config keys"):
        ToyConfig.from_dict({"vocab": 64, "heads": 2})
    assert ToyConfig.from_dict({"commit_len": 6}).commit_len == 6


def test_quantize_rounds_ties_up():
    assert quantize(-1.0, 64) == 0
    assert quantize(1.0, 64) == 63
    assert quantize(0.0, 64) == 32
    assert quantize(5.0, 64) == 63
    for token in range(64):
        assert quantize(dequantize(token, 64), 64) == token


def test_attribute_of_examples(toy_config):
    top = toy_config.vocab - 1
    assert attribute_of([top] * 4, range(4), toy_config).value == pytest.approx(1.0)
    assert attribute_of([0, top, 0, top], range(4), toy_config).value == pytest.approx(0.0)
    reading = attribute_of([16, 48], range(2), toy_config)
    assert reading.value == pytest.approx(1 / 63)
    assert (reading.start, reading.end) == (0, 2)
    with pytest.raises(ValueError, match="empty"):
        attribute_of([1, 2], range(1, 1), toy_config)
    with pytest.raises(ValueError, match="outside"):
        attribute_of([1, 2], range(0, 3), toy_config)


def test_sign_class_examples():
    assert sign_class(AttributeReading(0.9, 0, 1), 1.0) is StyleClass.TARGET_LIKE
    assert sign_class(AttributeReading(0.0, 0, 1), 1.0) is StyleClass.NEUTRAL
    assert sign_class(AttributeReading(-0.9, 0, 1), 1.0) is StyleClass.SOURCE_LIKE


def test_style_attribute_tracks_level(toy_config, toy_model):
    for level in LEVELS:
        value = style_attribute(encode_style(toy_config, level, toy_model.encoder), toy_config)
        assert value == pytest.approx(level, abs=1e-4)
    ids = style_prompt_ids(toy_config, 0.25)
    assert len(ids) == toy_config.style_len
    with pytest.raises(ValueError, match="not one of"):
        style_prompt_ids(toy_config, 0.3)


def test_mirrored_levels_meet_at_zero(toy_config, toy_model):
    src = encode_style(toy_config, -0.5, toy_model.encoder)
    tgt = encode_style(toy_config, 0.5, toy_model.encoder)
    mid = interpolate(src, compute_direction(src, tgt, {toy_config.attr_pos}), 1.0)
    value = style_attribute(mid, toy_config)
    assert -COMMIT_LEAK < value < 0.0


def test_filler_rows_carry_most_of_the_level(toy_config, toy_model):
    src = encode_style(toy_config, -1.0, toy_model.encoder)
    tgt = encode_style(toy_config, 1.0, toy_model.encoder)
    norms = compute_direction(src, tgt, range(toy_config.style_len)).norms()
    assert norms[toy_config.attr_pos] == pytest.approx(1.0, abs=1e-4)
    for position, norm in norms.items():
        if position != toy_config.attr_pos:
            assert 0.95 < norm < 0.99


def test_neutral_style_emits_the_middle_token(toy_config, toy_model, text_ids):
    style = encode_style(toy_config, 0.0, toy_model.encoder)
    tokens, _ = generate(toy_model.decoder, text_ids, style, 40, MaskSpec.full_causal())
    assert tokens == [round((toy_config.vocab - 1) / 2)] * 40


def test_first_tokens_match_scalar_recurrence(toy_config, toy_model, text_ids):
    style = encode_style(toy_config, 0.5, toy_model.encoder)
    a = style_attribute(style, toy_config)
    tokens, _ = generate(toy_model.decoder, text_ids, style, 8, MaskSpec.full_causal())
    plan = _plan(window=None, k=0, t_star=20, steps=21)
    expected = oracle_tokens(oracle_trajectory(plan, toy_config, a, a, naive=True), toy_config)
    assert tokens == expected[:8]


def test_oracle_fixed_point():
    cfg = ToyConfig()
    readout = oracle_trajectory(_plan(), cfg, 1.0, 1.0, naive=True)
    assert np.all(readout == 1.0)


def test_oracle_full_window_converges_slower():
    cfg = ToyConfig()
    narrow = oracle_trajectory(_plan(window=8, k=4), cfg, -1.0, 1.0)
    full = oracle_trajectory(_plan(window=None, k=4), cfg, -1.0, 1.0)
    for t in range(64 + 8 + 1, 129):
        assert abs(full[t - 1] - 1.0) > abs(narrow[t - 1] - 1.0)


def test_oracle_converges_to_midpoint():
    cfg = ToyConfig()
    readout = oracle_trajectory(_plan(window=8, k=4, alpha=1.0), cfg, -1.0, 0.0)
    assert abs(readout[-1]) <= 0.1


@pytest.mark.parametrize("window", DEFAULT_WINDOWS)
@pytest.mark.parametrize("k", DEFAULT_KS)
def test_decoder_agrees_with_oracle(toy_model, toy_config, window, k):
    plan = _plan(window=window, k=k)
    result = run_toy_transition(toy_model, plan)
    a_src = result.metrics["style_src"]
    a_tgt = result.metrics["style_modified"]

    free = oracle_tokens(oracle_trajectory(plan, toy_config, a_src, a_tgt), toy_config)
    assert max(abs(x - y) for x, y in zip(free, result.tokens)) <= 1

    forced = oracle_trajectory(plan, toy_config, a_src, a_tgt, tokens=result.tokens)
    assert max(abs(x - y) for x, y in zip(oracle_tokens(forced, toy_config), result.tokens)) <= 1


def test_naive_oracle_matches_decoder(toy_model, toy_config):
    plan = _plan()
    result = run_toy_transition(toy_model, plan, naive=True)
    expected = oracle_tokens(
        oracle_trajectory(plan, toy_config, result.metrics["style_src"], result.metrics["style_modified"], naive=True),
        toy_config,
    )
    assert result.tokens == expected


def test_commit_phase_variance_exceeds_late_phase(toy_model, toy_config):
    result = run_toy_transition(toy_model, _plan())
    series = attention_variance(result.trace_a)
    m = toy_config.commit_len
    assert series.values[m:, 0].max() < series.values[:m, 0].min()


def test_trace_is_peaked_then_uniform(toy_model, toy_config, text_ids):
    style = encode_style(toy_config, -0.5, toy_model.encoder)
    _, trace = generate(toy_model.decoder, text_ids, style, 12, MaskSpec.full_causal())
    weights = trace.cross_weights()
    m = toy_config.commit_len
    committed = weights[:m, 0]
    np.testing.assert_allclose(committed[:, toy_config.attr_pos], 1.0 - COMMIT_LEAK, rtol=1e-4)
    fillers = np.delete(committed, toy_config.attr_pos, axis=1)
    np.testing.assert_allclose(fillers.sum(axis=1), COMMIT_LEAK, rtol=1e-2)
    np.testing.assert_allclose(weights[m:, 0], 1.0 / toy_config.style_len, atol=1e-6)


def test_larger_configs_build():
    cfg = ToyConfig(vocab=32, dim=12, layers=3, commit_len=2, attr_channel=5, style_len=4, attr_pos=1, text_len=3)
    weights = build_toy_model(cfg)
    assert weights.num_layers == 3
    assert weights.vocab == 32
    style = encode_style(cfg, 1.0)
    tokens, _ = generate(weights, [0, 1, 2], style, 10, MaskSpec.full_causal())
    assert tokens == [31] * 10

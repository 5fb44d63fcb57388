import numpy as np
import pytest

from kvstyle.attention import KVCache
from kvstyle.decoder import DecoderState, decode, generate, init_decoder_weights, prefill
from kvstyle.embedding import PromptEmbedding
from kvstyle.experiments import DEFAULT_KS, DEFAULT_WINDOWS, run_toy_transition
from kvstyle.sampling import GREEDY
from kvstyle.toymodel import encode_style
from kvstyle.transition import (
    TransitionPlan,
    modified_style,
    run_naive_swap,
    run_transition,
    validate_plan,
)


def _plan(**overrides) -> TransitionPlan:
    values = {"t_star": 64, "k": 4, "window": 8, "alpha": 2.0, "steps": 128}
    values.update(overrides)
    return TransitionPlan(**values)


def _splice_oracle(weights, text, src, target, plan):
    """Fresh state over [B rows 1..n | A rows n+1..t*] continued under the target style."""
    n_text = len(text)
    n = n_text + plan.k
    spec = plan.mask(n_text)
    before = plan.mask_before(n_text)
    a = prefill(weights, text, src, before)
    tokens_a, _ = decode(a, plan.t_star, before, GREEDY.build())
    b = prefill(weights, text, target, spec)
    decode(b, plan.k, spec, GREEDY.build())
    rows = [
        (
            np.concatenate([b.cache.keys(layer)[:n], a.cache.keys(layer)[n:]]),
            np.concatenate([b.cache.values(layer)[:n], a.cache.values(layer)[n:]]),
        )
        for layer in range(weights.num_layers)
    ]
    spliced = DecoderState(weights, KVCache.from_rows(rows), target, n_text, next_token=tokens_a[-1])
    logits: list[np.ndarray] = []
    tokens, _ = decode(spliced, plan.steps - plan.t_star, spec, GREEDY.build(), logits)
    return tokens_a + tokens, np.stack(logits)


def _random_styles(dim: int = 16):
    rng = np.random.default_rng(42)
    src = PromptEmbedding(rng.normal(size=(6, dim)), frozenset({2, 4}))
    tgt = PromptEmbedding(rng.normal(size=(6, dim)), frozenset({2, 4}))
    return src, tgt


def test_validate_plan_examples():
    assert validate_plan(_plan(k=4), 8) == 12
    assert validate_plan(_plan(k=0), 8) == 8
    with pytest.raises(ValueError, match="transition precedes committed prefix"):
        validate_plan(_plan(t_star=10, k=4), 8)
    with pytest.raises(ValueError, match="steps must exceed t_star"):
        validate_plan(_plan(steps=64), 8)
    with pytest.raises(ValueError, match="k must be >= 0"):
        validate_plan(_plan(k=-1), 8)
    with pytest.raises(ValueError, match="window must be >= 1 or full"):
        validate_plan(_plan(window=0), 8)


def test_full_window_maps_to_causal_mask():
    assert _plan(window=None).mask(8).describe() == "full_causal"
    assert _plan(window=8).mask(8).describe() == "sliding(n=12, w=8)"
    assert _plan(window_before_transition=False).mask_before(8).describe() == "full_causal"


@pytest.mark.parametrize("window", DEFAULT_WINDOWS)
@pytest.mark.parametrize("k", DEFAULT_KS)
def test_toy_transition_matches_splice_oracle(toy_model, toy_config, text_ids, window, k):
    plan = _plan(window=window, k=k)
    src = encode_style(toy_config, -1.0, toy_model.encoder)
    tgt = encode_style(toy_config, 1.0, toy_model.encoder)
    result = run_transition(toy_model.decoder, text_ids, src, tgt, {toy_config.attr_pos}, plan)
    tokens, logits = _splice_oracle(toy_model.decoder, text_ids, src, result.modified_style, plan)
    assert result.tokens == tokens
    assert np.max(np.abs(result.logits[plan.t_star :] - logits)) <= 1e-5


def test_random_weights_transition_matches_splice_oracle():
    weights = init_decoder_weights(seed=21)
    src, tgt = _random_styles()
    text = [5, 6, 7, 8, 9]
    plan = _plan(t_star=30, k=6, window=5, alpha=1.5, steps=60)
    result = run_transition(weights, text, src, tgt, {2, 4}, plan)
    target = modified_style(src, tgt, {2, 4}, plan.alpha)
    tokens, logits = _splice_oracle(weights, text, src, target, plan)
    assert result.tokens == tokens
    assert np.max(np.abs(result.logits[plan.t_star :] - logits)) <= 1e-5


def test_phase_isolation():
    weights = init_decoder_weights(seed=22)
    src, tgt = _random_styles()
    text = [1, 2, 3, 4]
    base = _plan(t_star=24, k=2, window=6, alpha=1.0, steps=40)
    reference, _ = generate(weights, text, src, base.t_star, base.mask_before(len(text)))
    for alpha, k in ((1.0, 2), (-1.0, 2), (2.0, 10)):
        plan = _plan(t_star=24, k=k, window=6, alpha=alpha, steps=40)
        result = run_transition(weights, text, src, tgt, {2, 4}, plan)
        assert result.tokens[: plan.t_star] == reference


def test_parallel_and_sequential_runs_agree():
    weights = init_decoder_weights(seed=23)
    src, tgt = _random_styles()
    plan = _plan(t_star=20, k=3, window=4, alpha=2.0, steps=36)
    text = [0, 1, 2]
    sequential = run_transition(weights, text, src, tgt, {2, 4}, plan)
    parallel = run_transition(weights, text, src, tgt, {2, 4}, plan, parallel=True)
    assert sequential.tokens == parallel.tokens
    assert np.array_equal(sequential.logits, parallel.logits)


def test_swap_records(toy_model, toy_config, text_ids):
    src = encode_style(toy_config, -1.0, toy_model.encoder)
    tgt = encode_style(toy_config, 1.0, toy_model.encoder)
    plan = _plan()
    full = run_transition(toy_model.decoder, text_ids, src, tgt, {toy_config.attr_pos}, plan)
    naive = run_naive_swap(toy_model.decoder, text_ids, src, tgt, {toy_config.attr_pos}, plan)
    assert full.swap_record.n == len(text_ids) + plan.k
    assert full.swap_record.performed
    assert not naive.swap_record.performed
    assert len(full.tokens) == len(naive.tokens) == plan.steps
    assert len(full.trace_a) == plan.steps
    assert naive.tokens[: plan.t_star] == full.tokens[: plan.t_star]


def test_full_vector_variant_uses_beta(toy_model, toy_config, text_ids):
    src = encode_style(toy_config, -1.0, toy_model.encoder)
    tgt = encode_style(toy_config, 1.0, toy_model.encoder)
    plan = _plan(beta=1.0)
    result = run_transition(toy_model.decoder, text_ids, src, tgt, {toy_config.attr_pos}, plan)
    expected = modified_style(src, tgt, {toy_config.attr_pos}, 2.0, 1.0)
    assert np.array_equal(result.modified_style.vectors, expected.vectors)


def test_full_method_converts_style(toy_model):
    result = run_toy_transition(toy_model, _plan(window=8, k=4))
    span = result.metrics["span"]
    assert result.metrics["delta_attribute"] >= 0.8 * span
    assert result.metrics["last_attribute"] >= 0.8


def test_naive_swap_has_no_effect(toy_model):
    result = run_toy_transition(toy_model, _plan(), naive=True)
    assert abs(result.metrics["delta_attribute"]) < 0.05 * result.metrics["span"]
    assert abs(result.metrics["last_attribute"] - result.metrics["first_attribute"]) < 0.05


def test_smaller_windows_change_style_more(toy_model):
    deltas = [abs(run_toy_transition(toy_model, _plan(window=w)).metrics["delta_attribute"]) for w in DEFAULT_WINDOWS]
    assert deltas == sorted(deltas, reverse=True)
    assert deltas[0] > deltas[-1]


@pytest.mark.parametrize("window", DEFAULT_WINDOWS)
def test_text_only_swap_does_not_convert(toy_model, window):
    result = run_toy_transition(toy_model, _plan(window=window, k=0))
    assert abs(result.metrics["delta_attribute"]) <= 0.1 * result.metrics["span"]


@pytest.mark.parametrize("window", [8, 16])
def test_committed_buffer_swap_converts(toy_model, window):
    result = run_toy_transition(toy_model, _plan(window=window, k=4))
    assert abs(result.metrics["delta_attribute"]) >= 0.5 * result.metrics["span"]

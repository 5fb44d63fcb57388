import pytest

from kvstyle.attention import MaskSpec
from kvstyle.decoder import generate
from kvstyle.embedding import alpha_grid
from kvstyle.experiments import (
    DEFAULT_KS,
    DEFAULT_WINDOWS,
    interpolation_sweep,
    parse_window,
    window_k_grid,
    window_label,
)
from kvstyle.toymodel import StyleClass, encode_style, segment_readings
from kvstyle.transition import modified_style


def test_parse_window():
    assert parse_window("full") is None
    assert parse_window(" FULL ") is None
    assert parse_window("16") == 16
    for bad in ("0", "-3", "wide"):
        with pytest.raises(ValueError, match="window must be >= 1 or full"):
            parse_window(bad)
    assert window_label(None) == "full"
    assert window_label(8) == "8"


@pytest.fixture(scope="module")
def sweep(toy_model):
    return interpolation_sweep(toy_model, alpha_grid())


def test_sweep_is_monotone(sweep):
    assert [row.alpha for row in sweep.rows] == [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0]
    values = [row.attribute_mean for row in sweep.rows]
    assert values == sorted(values)
    assert sweep.spearman_rho == pytest.approx(1.0)
    assert list(sweep.spearman) == [None]


def test_sweep_sign_class_flips_past_the_midpoint(sweep):
    classes = [row.sign_class for row in sweep.rows]
    assert classes[:4] == [StyleClass.SOURCE_LIKE] * 4
    assert classes[4] is StyleClass.NEUTRAL
    assert classes[5:] == [StyleClass.TARGET_LIKE] * 2


def test_sweep_midpoint_is_neutral(sweep):
    by_alpha = {row.alpha: row.attribute_mean for row in sweep.rows}
    assert abs(by_alpha[1.0]) <= 0.02
    assert abs(by_alpha[1.0] - (by_alpha[0.0] + by_alpha[2.0]) / 2) <= 0.02


def test_sweep_alpha_zero_reproduces_source_run(toy_model, toy_config, text_ids, sweep):
    src = encode_style(toy_config, -0.5, toy_model.encoder)
    tokens, _ = generate(toy_model.decoder, text_ids, src, 128, MaskSpec.full_causal())
    _, last = segment_readings(tokens, 32, toy_config)
    zero = next(row for row in sweep.rows if row.alpha == 0.0)
    assert zero.attribute_mean == last.value


def test_sweep_with_betas_groups_rows(toy_model):
    result = interpolation_sweep(toy_model, [0.0, 1.0, 2.0], steps=40, betas=[0.0, 1.0])
    assert len(result.rows) == 6
    assert [row.beta for row in result.rows] == [0.0] * 3 + [1.0] * 3
    assert set(result.spearman) == {0.0, 1.0}
    assert "beta" in result.rows[0].as_dict()


def test_beta_moves_the_decoded_attribute(toy_model):
    result = interpolation_sweep(toy_model, [1.0], steps=40, betas=[0.0, 1.0])
    by_beta = {row.beta: row.attribute_mean for row in result.rows}
    assert by_beta[0.0] == pytest.approx(-1 / 63)
    assert by_beta[1.0] == pytest.approx(1 / 63)


@pytest.mark.parametrize("a_src,a_tgt", [(-1.0, 1.0), (-0.5, 0.5), (-0.25, 0.75), (0.5, -0.5)])
def test_alpha_two_decodes_like_the_target_prompt(toy_model, toy_config, text_ids, a_src, a_tgt):
    src = encode_style(toy_config, a_src, toy_model.encoder)
    tgt = encode_style(toy_config, a_tgt, toy_model.encoder)
    moved = modified_style(src, tgt, [toy_config.attr_pos], 2.0)
    tokens, _ = generate(toy_model.decoder, text_ids, moved, 64, MaskSpec.full_causal())
    expected, _ = generate(toy_model.decoder, text_ids, tgt, 64, MaskSpec.full_causal())
    assert tokens == expected


def test_sweep_rejects_empty_alphas(toy_model):
    with pytest.raises(ValueError, match="alphas must not be empty"):
        interpolation_sweep(toy_model, [])


def test_window_k_grid(toy_model):
    rows = window_k_grid(toy_model, DEFAULT_WINDOWS, DEFAULT_KS, workers=2)
    assert len(rows) == 12
    assert [row.window for row in rows[-3:]] == [None] * 3
    assert [(row.window, row.k) for row in rows[:3]] == [(8, 0), (8, 2), (8, 4)]
    span = 2.0
    for row in rows:
        if row.k == 0:
            assert abs(row.delta_attribute) <= 0.1 * span
    converted = [row.delta_attribute for row in rows if row.k == 4]
    assert converted == sorted(converted, reverse=True)
    assert rows[2].as_dict()["window"] == "8"
    assert rows[-1].as_dict()["window"] == "full"


def test_window_k_grid_rejects_empty_axes(toy_model):
    with pytest.raises(ValueError):
        window_k_grid(toy_model, [], DEFAULT_KS)

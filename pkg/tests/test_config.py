import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refdvgo.config import ConfigError, RunConfig, dump, parse
from refdvgo.loss import LossWeights


def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse(dump(cfg)) == cfg
    assert dump(parse(dump(cfg))) == dump(cfg)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 10_000), st.integers(1, 8192), st.sampled_from([(8, 8, 8), (16, 24, 32)]),
    st.floats(0, 1, allow_nan=False), st.booleans(), st.booleans(),
    st.one_of(st.none(), st.floats(1e-8, 0.5)), st.sampled_from(["white", "black"]),
)
def test_round_trip_is_lossless(iters, batch, dims, w_pp, no_ide, coarse, fine_alpha, bg):
    cfg = RunConfig()
    cfg.train.fine_iters = iters
    cfg.train.batch_rays = batch
    cfg.train.coarse_dims = dims
    cfg.train.weights = LossWeights(w_pp=w_pp)
    cfg.train.disable_ide = no_ide
    cfg.train.fine_alpha_init = fine_alpha
    cfg.train.coarse_weights = LossWeights(w_bg=0.01) if coarse else None
    cfg.data.background = bg
    cfg.train.background = bg
    assert parse(dump(cfg)) == cfg


def test_partial_file_uses_defaults():
    cfg = parse("[train]\nfine_iters = 7\nfine_dims_final = 32\npgs_count = 2\n[loss]\nw_o = 0.5\n")
    assert cfg.train.fine_iters == 7
    assert cfg.train.fine_dims_final == (32, 32, 32)
    assert cfg.train.weights.w_o == 0.5
    assert cfg.train.weights.w_ph == 1.0
    assert cfg.data == RunConfig().data


def test_explicit_pgs_schedule():
    cfg = parse("[train]\nfine_dims_final = 32\npgs_steps = 0: 16x16x16; 50: 24; 90: 32,32,32\n")
    assert cfg.train.pgs_steps == [(0, (16, 16, 16)), (50, (24, 24, 24)), (90, (32, 32, 32))]
    assert parse(dump(cfg)).train.pgs_steps == cfg.train.pgs_steps


def test_unknown_key_names_key_and_line():
    text = "[data]\nkind = lambertian_cube\n\n[train]\nfine_iters = 5\nfine_itres = 6\n"
    with pytest.raises(ConfigError, match=r"run\.ini:6: unknown key 'fine_itres' in \[train\]"):
        parse(text, "run.ini")


def test_unknown_section():
    with pytest.raises(ConfigError, match=r":3: unknown section \[optimizer\]"):
        parse("[train]\nseed = 1\n[optimizer]\nlr = 3\n")


def test_bad_value_has_line():
    with pytest.raises(ConfigError, match=r":2: bad value for 'batch_rays'"):
        parse("[train]\nbatch_rays = lots\n")


def test_bad_pgs_schedule_rejected():
    with pytest.raises(ConfigError):
        parse("[train]\nfine_dims_final = 32\npgs_steps = 0: 16; 10: 8\n")


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        parse("[loss]\nw_tv = -1\n")


def test_syntax_error():
    with pytest.raises(ConfigError):
        parse("fine_iters = 3\n")


def test_file_round_trip(tmp_path):
    cfg = parse("[train]\nseed = 9\n[coarse_loss]\nw_pp = 0.1\n[run]\nout = somewhere\n")
    cfg.save(tmp_path / "a.ini")
    assert RunConfig.load(tmp_path / "a.ini") == cfg
    assert cfg.train.stage_weights("coarse").w_pp == 0.1
    assert cfg.train.stage_weights("fine").w_pp == LossWeights().w_pp

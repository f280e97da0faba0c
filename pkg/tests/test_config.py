import pytest
from hypothesis import given
from hypothesis import strategies as st

from cloudrain.config import RunConfig
from cloudrain.errors import InvalidInputError


def test_defaults():
    cfg = RunConfig()
    assert cfg.seed == 0 and cfg.epochs == 30 and cfg.points == 512
    assert cfg.encoder == (32, 64, 128) and cfg.kinds == "quadratic-strict"


def test_parse_types_and_comments():
    cfg = RunConfig.parse("""
        # a comment
        seed = 7
        lr = 0.01   # trailing comment
        canonicalize = yes
        encoder = 16, 32
        kinds = quadratic-strict, quadratic, conventional
        extents = 6, 4.5, 3
        symmetry = mirror-paired
    """)
    assert cfg.seed == 7 and cfg.lr == 0.01 and cfg.canonicalize is True
    assert cfg.encoder == (16, 32) and cfg.extents == (6.0, 4.5, 3.0)
    assert cfg.kinds == ("quadratic-strict", "quadratic", "conventional")
    assert cfg.symmetry == "mirror-paired"


@pytest.mark.parametrize("text", ["colour = red", "seed: 3", "seed = three", "plots = maybe"])
def test_rejects_bad_lines(text):
    with pytest.raises(InvalidInputError):
        RunConfig.parse(text)


def test_round_trip_through_text():
    cfg = RunConfig.parse("seed = 3\nlr = 0.1\nhead = 4\ngadget_eps = 0.5, 1e-7")
    assert RunConfig.parse(cfg.to_text()) == cfg


@given(st.integers(0, 2**31), st.floats(1e-6, 1.0), st.booleans())
def test_round_trip_property(seed, lr, canon):
    cfg = RunConfig(seed=seed, lr=lr, canonicalize=canon)
    assert RunConfig.parse(cfg.to_text()) == cfg


def test_digest_ignores_output_location():
    a = RunConfig(out_dir="a", plots=True)
    assert a.digest() == RunConfig(out_dir="b", plots=False).digest()
    assert a.digest() != RunConfig(seed=1).digest()

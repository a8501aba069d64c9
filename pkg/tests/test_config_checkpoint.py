import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxconnect import checkpoint as C
from proxconnect import config as K
from proxconnect import optimizers as O
from proxconnect import quantizers as Q
from proxconnect import schedules as S

# -- config -------------------------------------------------------------------


def test_defaults_cover_every_key():
    cfg = K.default()
    assert set(cfg.values) == set(K.DEFAULTS)
    assert cfg["quantizer.rho0"] == 0.01 and cfg["sweep.seeds"] == [0, 1, 2]


def test_parse_text_types_and_comments():
    cfg = K.parse_text("""
        # comment line
        problem.kind = quadratic   # trailing comment
        problem.h = 1, 0.5, inf
        quantizer.clip = no
        run.hard_quantize_at =
        sweep.kinds = PC, BC
    """)
    assert cfg["problem.kind"] == "quadratic"
    assert cfg["problem.h"] == [1.0, 0.5, math.inf]
    assert cfg["quantizer.clip"] is False
    assert cfg["run.hard_quantize_at"] is None
    assert cfg["sweep.kinds"] == ["PC", "BC"]


def test_unknown_key_reports_line_and_key():
    with pytest.raises(K.ConfigError, match=r"exp.cfg:3: unknown config key 'quantizer.rho'"):
        K.parse_text("run.steps = 5\n\nquantizer.rho = 0.1\n", source="exp.cfg")


def test_bad_value_reports_key_path():
    with pytest.raises(K.ConfigError, match=r"<config>:1: run.steps: cannot parse 'ten'"):
        K.parse_text("run.steps = ten")


def test_missing_equals_sign():
    with pytest.raises(K.ConfigError, match="expected 'key = value'"):
        K.parse_text("run.steps 5")


def test_load_applies_overrides_after_file(tmp_path):
    f = tmp_path / "a.cfg"
    f.write_text("run.steps = 5\nrun.seed = 3\n")
    cfg = K.load(f, ["run.steps=9"])
    assert cfg["run.steps"] == 9 and cfg["run.seed"] == 3
    with pytest.raises(K.ConfigError, match="not key=value"):
        K.load(None, ["run.steps"])
    with pytest.raises(K.ConfigError, match="cannot read config"):
        K.load(tmp_path / "missing.cfg")


def test_dumps_round_trips():
    cfg = K.load(None, ["problem.h=0.1,3", "quantizer.varrho=0.25", "quantizer.clip=false"])
    assert K.parse_text(cfg.dumps()).values == cfg.values


def test_builders():
    cfg = K.load(None, ["problem.kind=quadratic", "problem.dim=3", "problem.h=1,2,3", "problem.b=0.5"])
    prob = K.build_problem(cfg)
    np.testing.assert_array_equal(np.diag(prob.H), [1, 2, 3])
    np.testing.assert_array_equal(prob.b, [0.5] * 3)
    assert isinstance(K.build_quantizer(cfg, prob.groups()), Q.PiecewiseLinear)
    assert K.build_schedule(cfg).kind == "constant_eta"


@pytest.mark.parametrize("override, build", [
    ("problem.kind=cubic", K.build_problem),
    ("quantizer.kind=fuzzy", lambda cfg: K.build_quantizer(cfg, ["w"])),
    ("schedule.kind=warp", K.build_schedule),
    ("schedule.mu_rule=odd", K.mu_rule),
])
def test_builders_reject_unknown_names(override, build):
    cfg = K.load(None, [override])
    with pytest.raises(K.ConfigError, match=override.split("=")[0].rsplit(".", 1)[0]):
        build(cfg)


def test_broadcast_length_mismatch():
    cfg = K.load(None, ["problem.kind=quadratic", "problem.dim=3", "problem.h=1,2"])
    with pytest.raises(K.ConfigError, match="problem.h: expected 1 or 3 values"):
        K.build_problem(cfg)


def test_quantizer_groups_select_subset():
    cfg = K.load(None, ["quantizer.groups=W1"])
    spec = K.build_quantizer(cfg, ["W1", "b1"])
    assert isinstance(spec, Q.PerGroup)
    with pytest.raises(K.ConfigError, match="unknown groups"):
        K.build_quantizer(K.load(None, ["quantizer.groups=W9"]), ["W1"])


# -- checkpoints --------------------------------------------------------------


def _state(steps=7, seed=3):
    from proxconnect.problems import MLP, SyntheticDataset, gen_blobs

    prob = MLP(gen_blobs(SyntheticDataset(n_samples=40, n_features=3, n_classes=3)), hidden=(5,))
    plq = Q.PiecewiseLinear(Q.PiecewiseLinearQuantizer(Q.make_grid([-1, 0, 1]), 0.05, 0.05))
    tr = O.run(prob, "PC", plq, S.StepSchedule("polynomial_eta", eta0=0.3, p=0.5), steps, seed, batch_size=8)
    return prob, plq, tr.final_state


def _same(a, b):
    assert a.step == b.step and a.rng_seed == b.rng_seed and a.optimizer_kind == b.optimizer_kind
    assert a.schedule == b.schedule
    for x, y in ((a.w_star, b.w_star), (a.w_quant, b.w_quant)):
        assert list(x) == list(y)
        for k in x:
            assert x[k].shape == y[k].shape
            assert x[k].tobytes() == y[k].tobytes()


def test_checkpoint_round_trip_bit_exact(tmp_path):
    _, _, state = _state()
    C.save(tmp_path / "c.pckpt", state)
    back = C.load(tmp_path / "c.pckpt")
    _same(state, back)
    assert C.dumps(back) == C.dumps(state)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8))
def test_checkpoint_values_round_trip(vals):
    _, _, state = _state(steps=1)
    state.w_star = {"w": np.array(vals)}
    assert C.loads(C.dumps(state)).w_star["w"].tobytes() == np.array(vals).tobytes()


def test_checkpoint_header_format():
    _, _, state = _state(steps=2)
    text = C.dumps(state)
    assert text.startswith("PCKPT 1\n")
    assert "group w_star.W1 15\n" in text and "group w_quant.b2 3\n" in text


def test_checkpoint_resume_equals_uninterrupted():
    prob, plq, _ = _state()
    sch = S.StepSchedule("polynomial_eta", eta0=0.3, p=0.5)
    full = O.run(prob, "PC", plq, sch, 20, 3, batch_size=8).final_state
    half = O.run(prob, "PC", plq, sch, 9, 3, batch_size=8).final_state
    half = C.loads(C.dumps(half))
    rest = O.run(prob, "PC", plq, sch, 11, 3, batch_size=8, state=half).final_state
    _same(full, rest)


@pytest.mark.parametrize("text, match", [
    ("", "expected header"),
    ("PCKPT 2\n", "expected header"),
    ("PCKPT 1\nkind PC\n", "missing"),
    ("PCKPT 1\ngroup w_star.w 3\n1\n2\n", "file ends early"),
    ("PCKPT 1\ngroup w_star.w 1\nabc\n", "group w_star.w"),
    ("PCKPT 1\na b c d\n", "cannot parse"),
])
def test_checkpoint_malformed(text, match):
    with pytest.raises(C.CheckpointError, match=match):
        C.loads(text)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(C.CheckpointError, match="cannot read"):
        C.load(tmp_path / "nope.pckpt")

import numpy as np
import pytest

from sada.errors import ValidationError
from sada.model import ModelConfig, build_model

TINY = ModelConfig(levels=3, feature_dim=8, in_dim=4, kernel=3,
                   disc_width=8, disc_depth=1)


def test_param_groups_partition_all_params():
    model = build_model(TINY, class_count=3, seed=1)
    groups = model.param_groups()
    assert set(groups) == {"backbone", "conditioning", "discriminators"}
    names = [p.name for ps in groups.values() for p in ps]
    assert len(names) == len(set(names))
    assert sorted(names) == sorted(p.name for p in model.all_params())
    assert len(groups["discriminators"]) > 0
    # learnable conditioning contributes exactly one parameter
    assert [p.name for p in groups["conditioning"]] == ["conditioning.emb"]


def test_ema_covers_everything_but_discriminators():
    model = build_model(TINY, class_count=3, seed=1)
    groups = model.param_groups()
    ema_names = {p.name for p in model.ema_params()}
    assert ema_names == {p.name for p in groups["backbone"] + groups["conditioning"]}
    assert not ema_names & {p.name for p in groups["discriminators"]}


def test_fixed_conditioning_has_no_group_params():
    cfg = ModelConfig(levels=2, feature_dim=8, in_dim=4, disc_width=8,
                      disc_depth=1, conditioning="sinusoidal")
    model = build_model(cfg, class_count=3, seed=1)
    assert model.param_groups()["conditioning"] == []


def test_seeded_construction_is_deterministic():
    a = build_model(TINY, class_count=3, seed=5)
    b = build_model(TINY, class_count=3, seed=5)
    c = build_model(TINY, class_count=3, seed=6)
    for name, v in a.values().items():
        np.testing.assert_array_equal(v, b.values()[name])
    assert any(not np.array_equal(v, c.values()[name])
               for name, v in a.values().items())


def test_set_values_roundtrip():
    model = build_model(TINY, class_count=3, seed=1)
    other = build_model(TINY, class_count=3, seed=2)
    other.set_values(model.values())
    for name, v in model.values().items():
        np.testing.assert_array_equal(other.values()[name], v)
    with pytest.raises(ValidationError):
        model.set_values({"pyramid.proj.w": np.zeros((1, 1))})


def test_zero_grad_clears_accumulators():
    model = build_model(TINY, class_count=3, seed=1)
    for p in model.all_params():
        p.grad[:] = 1.0
    model.zero_grad()
    assert all(np.all(p.grad == 0.0) for p in model.all_params())


def test_one_discriminator_per_level():
    model = build_model(TINY, class_count=2, seed=1)
    assert len(model.discriminators) == 3
    # per-level MLPs do not share parameters
    names = {p.name for d in model.discriminators for p in d.params}
    assert any(n.startswith("disc.l0.") for n in names)
    assert any(n.startswith("disc.l2.") for n in names)


def test_class_count_validation():
    with pytest.raises(ValidationError):
        build_model(TINY, class_count=0, seed=1)
    with pytest.raises(ValidationError):
        ModelConfig(disc_depth=0)

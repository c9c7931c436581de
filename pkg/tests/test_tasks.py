import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmsynth.tasks import PRESETS, Background, SplitSpec, all_tasks, build_proof_tasks, split_labels


@pytest.mark.parametrize("name, n, sizes", [
    ("iset.mm", 8916, (7123, 890, 903)),
    ("set.mm", 27218, (21786, 2712, 2720)),
])
def test_preset_sizes(name, n, sizes):
    assert SplitSpec.preset(name).sizes(n) == sizes


def test_all_train(mini):
    train, valid, test = build_proof_tasks(mini, SplitSpec(3, (1.0, 0.0, 0.0)))
    assert len(train) == 42 and not valid and not test


@given(st.integers(0, 2 ** 64 - 1))
@settings(max_examples=25, deadline=None)
def test_split_partitions_and_is_deterministic(mini, seed):
    spec = SplitSpec(seed, PRESETS["default"])
    a = build_proof_tasks(mini, spec)
    b = build_proof_tasks(mini, spec)
    assert split_labels(a) == split_labels(b)
    labels = [t.label for part in a for t in part]
    assert sorted(labels) == sorted(f.label for f in mini.theorems)
    for part in a:
        idx = [t.target.index for t in part]
        assert idx == sorted(idx)


def test_bad_specs():
    with pytest.raises(ValueError):
        SplitSpec(0, (0.5, 0.5))
    with pytest.raises(ValueError):
        SplitSpec(0, (0.5, 0.4, 0.4))
    with pytest.raises(ValueError):
        SplitSpec(-1)


def test_background_is_the_preceding_provable_assertions(mini):
    tasks = all_tasks(mini)
    t = next(t for t in tasks if t.label == "syl")
    bg = t.background
    labels = list(bg)
    assert len(labels) == len(bg)
    assert "ax-mp" in bg and "mpd" in bg
    assert "syl" not in bg and "sylcom" not in bg
    assert "wi" not in bg
    expect = [f.label for f in mini.assertions if f.index < t.target.index]
    assert labels == expect
    assert isinstance(bg, Background)

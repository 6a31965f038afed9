import numpy as np
import pytest
from hypothesis import given, strategies as st

from sideinfo_rope import diagnostics
from sideinfo_rope.diagnostics import (
    ShotRefMatrix,
    confusion_argmax,
    is_bound_dominant,
    shot_to_ref_scores,
)
from sideinfo_rope.layout import ShotSpec, build_layout
from sideinfo_rope.sideinfo import SideInfoVec


def _layout(ref_tokens=(2, 2), shot_tokens=(3, 3)):
    shots = [ShotSpec(s, n, 1, 1, side=SideInfoVec.zeros(len(ref_tokens))) for s, n in enumerate(shot_tokens, 1)]
    return build_layout(list(ref_tokens), shots, 1)


def test_uniform_probs_give_one_over_n():
    lay = _layout()  # N = 10
    m = shot_to_ref_scores(np.full((10, 10), 0.1), lay)
    np.testing.assert_allclose(m.values, 0.1)
    assert m.row_labels == ("shot_1", "shot_2") and m.col_labels == ("ref_1", "ref_2")
    # each entry is a mean of per-key probabilities; summed over ref 1's 2 keys it is 0.2
    np.testing.assert_allclose(m.values * 2, 0.2)


def test_all_shot_mass_on_one_ref_token():
    lay = _layout(ref_tokens=(1, 2), shot_tokens=(2,))
    p = np.full((5, 5), 0.2)
    p[3:, :] = 0.0
    p[3:, 0] = 1.0
    m = shot_to_ref_scores(p, lay)
    np.testing.assert_array_equal(m.values, [[1.0, 0.0]])


def test_shot_to_ref_size_mismatch():
    with pytest.raises(ValueError):
        shot_to_ref_scores(np.ones((4, 4)), _layout())


@given(st.integers(0, 2**32 - 1))
def test_entries_are_probability_means(seed):
    rng = np.random.default_rng(seed)
    lay = _layout((1, 3, 2), (2, 4))
    p = rng.random((12, 12))
    p /= p.sum(1, keepdims=True)
    m = shot_to_ref_scores(p, lay)
    assert np.all((m.values >= 0) & (m.values <= 1))
    # a shot row's total mass on reference tokens bounds the token-weighted entry sum
    sizes = np.array([1, 3, 2])
    for i, (q0, q1) in enumerate(lay.shot_ranges):
        assert (m.values[i] * sizes).sum() <= 1.0 + 1e-12
        assert (m.values[i] * sizes).sum() == pytest.approx(p[q0:q1, :6].sum(1).mean())


def test_confusion_examples():
    r = confusion_argmax(np.array([[0.9, 0.1], [0.2, 0.8]]), [1, 2])
    assert r.accuracy == 1.0 and r.predictions == (1, 2) and r.confused == ()
    r = confusion_argmax(np.full((3, 2), 0.5), [1, 2, 2])
    assert r.predictions == (1, 1, 1)
    assert r.confused == (2, 3)
    assert r.accuracy == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        confusion_argmax(np.ones((2, 2)), [1])


def test_bound_dominance_is_strict():
    assert is_bound_dominant(np.array([[0.6, 0.4], [0.3, 0.7]]), [1, 2])
    assert not is_bound_dominant(np.array([[0.5, 0.5]]), [1])


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_export_roundtrip(tmp_path, fmt):
    m = ShotRefMatrix(np.random.default_rng(0).random((3, 2)) / 7, ("shot_1", "shot_2", "shot_3"), ("ref_1", "ref_2"))
    path = tmp_path / f"m.{fmt}"
    diagnostics.export(m, fmt, path)
    back = diagnostics.load(path)
    np.testing.assert_array_equal(back.values, m.values)
    assert back.row_labels == m.row_labels and back.col_labels == m.col_labels


def test_export_errors(tmp_path):
    m = ShotRefMatrix(np.ones((1, 1)), ("shot_1",), ("ref_1",))
    with pytest.raises(ValueError):
        diagnostics.export(m, "xml", tmp_path / "m.xml")
    with pytest.raises(OSError, match="missing"):
        diagnostics.export(m, "csv", tmp_path / "missing" / "m.csv")

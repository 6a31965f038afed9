import dataclasses
import numpy as np
import pytest

from sideinfo_rope.harness import gen_confusion_task, run_retrieval, substream
from sideinfo_rope.layout import TokenCoord
from sideinfo_rope.rope_core import RotaryConfig
from sideinfo_rope.sideinfo import SideInfoVec

CFG = RotaryConfig()


def _cosines(f):
    n = f / np.linalg.norm(f, axis=1, keepdims=True)
    g = n @ n.T
    return g[~np.eye(len(f), dtype=bool)]


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.95, 1.0])
@pytest.mark.parametrize("K", [2, 4])
def test_reference_cosines(rho, K):
    t = gen_confusion_task(num_refs=K, rho=rho, seed=11)
    np.testing.assert_allclose(_cosines(t.ref_features), rho, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(t.ref_features, axis=1), 1.0, atol=1e-12)


def test_rho_one_makes_references_identical():
    f = gen_confusion_task(rho=1.0, seed=2).ref_features
    np.testing.assert_allclose(f[0], f[1], atol=1e-15)


def test_task_is_deterministic_and_seed_sensitive():
    a, b = gen_confusion_task(seed=5), gen_confusion_task(seed=5)
    np.testing.assert_array_equal(a.features, b.features)
    assert a.bound_refs == b.bound_refs and a.coords == b.coords
    assert not np.array_equal(a.features, gen_confusion_task(seed=6).features)


def test_substreams_are_independent_of_each_other():
    x = substream(0, "refs").standard_normal(4)
    np.testing.assert_array_equal(x, substream(0, "refs").standard_normal(4))
    assert not np.array_equal(x, substream(0, "noise").standard_normal(4))


def test_task_structure():
    t = gen_confusion_task(num_refs=3, shots_per_ref=2, tokens_per_shot=8, seed=1)
    assert sorted(t.bound_refs) == [1, 1, 2, 2, 3, 3]
    assert t.layout.num_visual == 3 * 4 + 6 * 8 == len(t.features) == len(t.coords)
    for side, b in zip(t.layout.shot_sides, t.bound_refs):
        assert side == SideInfoVec.one_hot(b, 3)
    # shot tokens are noisy copies of the bound reference
    for (s0, s1), b in zip(t.layout.shot_ranges, t.bound_refs):
        resid = t.features[s0:s1] - t.ref_features[b - 1]
        assert np.abs(resid).max() < 6 * t.noise


@pytest.mark.parametrize("kwargs", [dict(num_refs=1), dict(feature_dim=2, num_refs=2), dict(rho=1.5)])
def test_task_rejects_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        gen_confusion_task(**kwargs)


def test_retrieval_checks_k():
    t = gen_confusion_task(num_refs=3, seed=0)
    with pytest.raises(ValueError):
        run_retrieval(t, CFG)


def test_retrieval_orthogonal_refs_need_no_side_info():
    for seed in range(20):
        r = run_retrieval(gen_confusion_task(rho=0.0, seed=seed), CFG, use_sideinfo=False)
        assert r.accuracy == 1.0, seed


def test_retrieval_with_side_info_separates_similar_refs():
    for seed in range(20):
        r = run_retrieval(gen_confusion_task(rho=0.95, seed=seed), CFG, use_sideinfo=True)
        assert r.accuracy == 1.0, seed
        assert r.attn.shape == (4, 2)
        assert np.all((r.attn.values >= 0) & (r.attn.values <= 1))


def test_retrieval_without_side_info_ignores_side_bits():
    t = gen_confusion_task(rho=0.95, seed=4)
    flipped = tuple(TokenCoord(c.t, c.h, c.w, SideInfoVec(c.side.bits[::-1])) for c in t.coords)
    t2 = dataclasses.replace(t, coords=flipped)
    a = run_retrieval(t, CFG, use_sideinfo=False)
    b = run_retrieval(t2, CFG, use_sideinfo=False)
    assert a.accuracy == b.accuracy
    np.testing.assert_array_equal(a.attn.values, b.attn.values)
    assert not np.array_equal(run_retrieval(t, CFG).attn.values, run_retrieval(t2, CFG).attn.values)


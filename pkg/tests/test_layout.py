import json

import pytest
from hypothesis import given, settings, strategies as st

from sideinfo_rope.attention import hierarchical_mask
from sideinfo_rope.errors import LayoutError, PromptParseError
from sideinfo_rope.layout import (
    Manifest,
    RefSpec,
    SequenceLayout,
    ShotSpec,
    assign_coords,
    build_layout,
    parse_shot_prompt,
)
from sideinfo_rope.sideinfo import SideInfoVec


@pytest.mark.parametrize(
    "caption, expected",
    [
        ("@character_1 walks in while @character_2 waves", "11"),
        ("an empty hallway", "00"),
        ("@character_2 turns; @character_2 smiles", "01"),
        ("@Character_1 nods.", "10"),
        ("email me at bob@character_1.com", "00"),
    ],
)
def test_parse_shot_prompt(caption, expected):
    assert parse_shot_prompt(caption, 2).to_string() == expected


@pytest.mark.parametrize("caption", ["@character_3 enters", "@character_0 waits"])
def test_parse_shot_prompt_out_of_range(caption):
    with pytest.raises(PromptParseError) as info:
        parse_shot_prompt(caption, 2)
    assert caption.split()[0] in str(info.value)


def _shots(n, frames=1, h=1, w=1, K=2):
    return [ShotSpec(s, frames, h, w, side=SideInfoVec.zeros(K)) for s in range(1, n + 1)]


def test_build_layout_sequential_packing():
    lay = build_layout([1, 1], _shots(2, frames=2), 2)
    assert lay.ref_ranges == ((0, 1), (1, 2))
    assert lay.shot_ranges == ((2, 4), (4, 6))
    assert lay.text_segments == ((0, 2), (2, 4))
    assert (lay.num_visual, lay.num_text) == (6, 4)


def test_single_shot_layout_has_all_ones_mask():
    lay = build_layout([3], _shots(1, frames=2, K=1), 5)
    assert hierarchical_mask(lay).bits.all()


def test_build_layout_rejects_empty_reference():
    with pytest.raises(ValueError):
        build_layout([1, 0], _shots(1), 2)


def test_layout_validation_rejects_overlap():
    with pytest.raises(LayoutError):
        SequenceLayout(2, ((0, 2), (1, 3)), ((3, 4),), ((0, 2),), (SideInfoVec.zeros(2),), 2)
    with pytest.raises(LayoutError):
        SequenceLayout(1, ((0, 1),), ((1, 2),), ((0, 3),), (SideInfoVec.zeros(1),), 2)


def test_assign_coords_examples():
    shot = [ShotSpec(1, 1, 1, 1, side=SideInfoVec.from_string("1"))]
    lay = build_layout([1], shot, 1)
    coords = assign_coords(lay, shot, [(1, 1)])
    assert (coords[1].t, coords[1].h, coords[1].w, coords[1].side.to_string()) == (0, 0, 0, "1")

    shots = _shots(2, frames=2)
    lay = build_layout([1, 1], shots, 2)
    coords = assign_coords(lay, shots, [(1, 1), (1, 1)])
    assert [c.t for c in coords[:2]] == [-1, -2]
    assert [c.side.to_string() for c in coords[:2]] == ["10", "01"]
    assert {c.t for c in coords[4:6]} == {2, 3}


def test_assign_coords_count_mismatch():
    shots = _shots(2)
    lay = build_layout([1, 1], shots, 2)
    with pytest.raises(ValueError):
        assign_coords(lay, shots[:1], [(1, 1), (1, 1)])
    with pytest.raises(ValueError):
        assign_coords(lay, shots, [(1, 2), (1, 1)])


def test_shot_side_parsed_from_caption():
    shots = [ShotSpec(1, 1, 1, 1, "@character_2 runs"), ShotSpec(2, 1, 1, 1, "@character_1 and @character_2")]
    lay = build_layout([1, 1], shots, 3)
    assert [s.to_string() for s in lay.shot_sides] == ["01", "11"]


def test_manifest_roundtrip(tmp_path):
    m = Manifest(2, 3, (RefSpec(2, 2), RefSpec(1, 3)),
                 (ShotSpec(1, 2, 2, 2, "@character_1 sits"), ShotSpec(2, 1, 2, 3, "@character_2 leaves")))
    path = tmp_path / "m.json"
    path.write_text(m.dumps())
    back = Manifest.load(path)
    assert back.to_dict() == m.to_dict()
    lay, coords = back.build()
    assert lay.num_visual == len(coords) == 4 + 3 + 8 + 6
    assert SequenceLayout.from_dict(json.loads(json.dumps(lay.to_dict()))) == lay


def test_manifest_rejects_inconsistent_side():
    data = {"K": 2, "T": 1, "refs": [{"grid": [1, 1]}, {"grid": [1, 1]}],
            "shots": [{"id": 1, "frames": 1, "h": 1, "w": 1, "caption": "@character_1", "side": "01"}]}
    with pytest.raises(LayoutError):
        Manifest.from_dict(data)


layouts = st.tuples(
    st.lists(st.integers(1, 6), min_size=1, max_size=4),
    st.lists(st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)), min_size=1, max_size=5),
    st.integers(1, 5),
)


@settings(max_examples=200)
@given(layouts)
def test_layout_fuzz_structure(case):
    ref_counts, dims, T = case
    K = len(ref_counts)
    shots = [ShotSpec(s, *d, side=SideInfoVec.zeros(K)) for s, d in enumerate(dims, start=1)]
    lay = build_layout(ref_counts, shots, T)
    # recompute ranges by cumulative sums
    bounds, pos = [], 0
    for n in list(ref_counts) + [f * h * w for f, h, w in dims]:
        bounds.append((pos, pos + n))
        pos += n
    assert lay.ref_ranges + lay.shot_ranges == tuple(bounds)
    assert lay.num_text == T * len(dims)
    coords = assign_coords(lay, shots, [(1, n) for n in ref_counts])
    assert len(coords) == pos
    shot_t = [c.t for c in coords[lay.num_ref_tokens:]]
    assert shot_t == sorted(shot_t)
    assert max(shot_t) == sum(d[0] for d in dims) - 1

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptive_feeding.core import BBox, ImageRecord
from adaptive_feeding.features import (
    BoxEncoding,
    ClassEncoding,
    FeatureSpec,
    FeatureVector,
    Proposal,
    SpecMismatchError,
    class_agnostic_spec,
    decode_blocks,
    encode,
    select_top_k,
)

IMAGE = ImageRecord("a", 500, 375, ())


@st.composite
def proposals(draw, n_classes=20, max_size=40):
    out = []
    for _ in range(draw(st.integers(0, max_size))):
        x0 = draw(st.floats(0, 480))
        y0 = draw(st.floats(0, 360))
        w = draw(st.floats(0, 100))
        h = draw(st.floats(0, 100))
        out.append(
            Proposal(
                draw(st.integers(0, n_classes - 1)),
                draw(st.sampled_from([0.1, 0.3, 0.5, 0.9])),
                BBox(x0, y0, x0 + w, y0 + h),
            )
        )
    return out


def test_default_dimensions():
    spec = FeatureSpec()
    assert spec.describe() == "20+(conf+4s)x25"
    assert spec.block_dim == 5
    assert spec.dimension() == 20 + 5 * 25 == 145


def test_coco_and_class_agnostic_dimensions():
    assert FeatureSpec(n_classes=80, k=50).dimension() == 80 + 5 * 50 == 330
    agnostic = class_agnostic_spec(25)
    assert agnostic.histogram_dim == 0
    assert agnostic.dimension() == 5 * 25 == 125


def test_prob_spec_dimension():
    spec = FeatureSpec.parse("(20-prob+conf+4s)x25")
    assert spec.class_encoding is ClassEncoding.PER_PROPOSAL_PROB
    assert spec.dimension() == 25 * (20 + 1 + 4)


@pytest.mark.parametrize(
    "text", ["20+(conf+4s)x25", "80+(conf+4s)x50", "(conf+4s)x25", "20+(4c)x10", "(20-prob+conf+4c)x5", "20+(conf)x3"]
)
def test_parse_describe_round_trip(text):
    spec = FeatureSpec.parse(text)
    assert spec.describe() == text
    assert FeatureSpec.parse(spec.describe()) == spec


def test_parse_rejects_garbage():
    for bad in ["20+(conf+9s)x25", "(conf)", "20+()x0", "hello"]:
        with pytest.raises(ValueError):
            FeatureSpec.parse(bad)


def test_hash_is_stable_and_distinct():
    assert FeatureSpec().hash == FeatureSpec.parse("20+(conf+4s)x25").hash
    assert len(FeatureSpec().hash) == 16
    assert FeatureSpec().hash != FeatureSpec(k=24).hash


@given(proposals())
def test_histogram_counts_top_k(props):
    spec = FeatureSpec()
    v = encode(props, IMAGE, spec).values
    assert v.shape == (145,)
    assert v[:20].sum() == min(len(props), 25)


@given(proposals())
def test_padding_is_zero(props):
    spec = FeatureSpec()
    v = encode(props, IMAGE, spec).values
    used = min(len(props), spec.k)
    assert np.all(v[20 + used * 5 :] == 0.0)


@given(proposals())
def test_decode_recovers_kept_proposals(props):
    spec = FeatureSpec(box_encoding=BoxEncoding.CORNERS_4C)
    blocks = decode_blocks(encode(props, IMAGE, spec), spec)
    for p, block in zip(select_top_k(props, spec.k), blocks):
        assert block["conf"] == p.score
        b = p.bbox
        expect = [b.xmin / 500, b.ymin / 375, min(b.xmax, 500) / 500, min(b.ymax, 375) / 375]
        assert np.allclose(block["box"], expect, rtol=0, atol=1e-12)


@given(proposals(), st.randoms(use_true_random=False))
def test_encoding_ignores_input_order(props, rnd):
    shuffled = list(props)
    rnd.shuffle(shuffled)
    spec = FeatureSpec(k=5)
    assert np.array_equal(encode(props, IMAGE, spec).values, encode(shuffled, IMAGE, spec).values)


def test_size_encoding_normalizes_by_image():
    v = encode([Proposal(3, 0.8, BBox(50, 75, 150, 375))], IMAGE, FeatureSpec()).values
    assert v[3] == 1.0
    assert list(v[20:25]) == pytest.approx([0.8, 0.1, 0.2, 0.2, 0.8])


def test_out_of_frame_box_is_clamped_first():
    v = encode([Proposal(0, 0.5, BBox(-100, -100, 600, 500))], IMAGE, FeatureSpec()).values
    assert list(v[21:25]) == [0.0, 0.0, 1.0, 1.0]


def test_prob_encoding_one_hot_fallback_and_vector():
    spec = FeatureSpec.parse("(3-prob+conf)x2")
    v = encode([Proposal(1, 0.7, BBox(0, 0, 1, 1))], IMAGE, spec).values
    assert list(v) == [0.0, 1.0, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0]
    v = encode([Proposal(1, 0.7, BBox(0, 0, 1, 1), probs=(0.2, 0.7, 0.1))], IMAGE, spec).values
    assert list(v[:4]) == [0.2, 0.7, 0.1, 0.7]
    with pytest.raises(SpecMismatchError):
        encode([Proposal(1, 0.7, BBox(0, 0, 1, 1), probs=(0.5, 0.5))], IMAGE, spec)


def test_unknown_class_rejected():
    with pytest.raises(SpecMismatchError):
        encode([Proposal(25, 0.7, BBox(0, 0, 1, 1))], IMAGE, FeatureSpec())


def test_decode_checks_hash():
    with pytest.raises(SpecMismatchError):
        decode_blocks(FeatureVector(np.zeros(145), "nope"), FeatureSpec())


def test_group_indices_partition_vector():
    spec = FeatureSpec()
    groups = spec.group_indices()
    assert list(groups) == ["class", "conf", "xmin", "ymin", "width", "height"]
    all_idx = np.sort(np.concatenate(list(groups.values())))
    assert np.array_equal(all_idx, np.arange(spec.dimension()))
    assert list(groups["conf"][:2]) == [20, 25]


def test_feature_vector_is_read_only():
    v = encode([], IMAGE, FeatureSpec())
    with pytest.raises(ValueError):
        v.values[0] = 1.0

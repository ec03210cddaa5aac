import random

import pytest

from surface_forge.geo import GeoPoint
from surface_forge.matching import Assignment, MatchResult, UNMATCHED
from surface_forge.surface import (
    NO_ROAD_CLASS,
    PAVED_TOKENS,
    PredictionRecord,
    ROAD_CLASS,
    SegmentObservation,
    SurfaceLabel,
    UNPAVED_TOKENS,
    aggregate_segment,
    combination_filter,
    label_all_segments,
    normalize_surface,
)


def pred(image_id="img", label=0, zs_class=ROAD_CLASS, zs_score=0.99, road_pct=0.5, score=0.9):
    return PredictionRecord(
        image_id=image_id,
        pred_label=label,
        pred_class="paved" if label == 0 else "unpaved",
        pred_score=score,
        zs_pred_class=zs_class,
        zs_pred_score=zs_score,
        road_pixel_percentage=road_pct,
    )


# ---------------------------------------------------------------- normalize


def test_normalize_paper_examples():
    assert normalize_surface("asphalt") == SurfaceLabel.PAVED
    assert normalize_surface("gravel") == SurfaceLabel.UNPAVED
    assert normalize_surface("paving stones") == SurfaceLabel.UNKNOWN  # space, not underscore


def test_normalize_trims_and_lowercases():
    assert normalize_surface("  Asphalt ") == SurfaceLabel.PAVED
    assert normalize_surface("GRAVEL") == SurfaceLabel.UNPAVED


def test_normalize_unknown_cases():
    assert normalize_surface(None) == SurfaceLabel.UNKNOWN
    assert normalize_surface("") == SurfaceLabel.UNKNOWN
    assert normalize_surface("cheese") == SurfaceLabel.UNKNOWN


def test_normalize_total_and_idempotent_over_all_tokens():
    for token in PAVED_TOKENS:
        assert normalize_surface(token) == SurfaceLabel.PAVED
    for token in UNPAVED_TOKENS:
        assert normalize_surface(token) == SurfaceLabel.UNPAVED
    # idempotent in the value domain: re-normalizing a label's own name is stable
    assert normalize_surface(SurfaceLabel.PAVED.value) == SurfaceLabel.PAVED
    assert normalize_surface(SurfaceLabel.UNPAVED.value) == SurfaceLabel.UNPAVED
    assert normalize_surface(SurfaceLabel.UNKNOWN.value) == SurfaceLabel.UNKNOWN
    assert not (PAVED_TOKENS & UNPAVED_TOKENS)


# ------------------------------------------------------------------- filter


def test_filter_low_road_share_any_score():
    assert combination_filter(pred(zs_class=NO_ROAD_CLASS, zs_score=0.55, road_pct=0.05)) is False


def test_filter_high_no_road_probability():
    assert combination_filter(pred(zs_class=NO_ROAD_CLASS, zs_score=0.95, road_pct=0.40)) is False


def test_filter_keeps_road_class_even_with_low_pixels():
    assert combination_filter(pred(zs_class=ROAD_CLASS, zs_score=0.99, road_pct=0.05)) is True


@pytest.mark.parametrize(
    "road_pct,zs_class,zs_score,keep",
    [
        (0.05, NO_ROAD_CLASS, 0.95, False),
        (0.05, NO_ROAD_CLASS, 0.55, False),
        (0.05, ROAD_CLASS, 0.95, True),
        (0.05, ROAD_CLASS, 0.55, True),
        (0.40, NO_ROAD_CLASS, 0.95, False),
        (0.40, NO_ROAD_CLASS, 0.55, True),
        (0.40, ROAD_CLASS, 0.95, True),
        (0.40, ROAD_CLASS, 0.55, True),
    ],
)
def test_filter_truth_table(road_pct, zs_class, zs_score, keep):
    assert combination_filter(pred(zs_class=zs_class, zs_score=zs_score, road_pct=road_pct)) is keep


def test_filter_boundaries_are_strict():
    # exactly 10% road pixels is not "less than 10%"; exactly 90% is not "greater than 90%"
    assert combination_filter(pred(zs_class=NO_ROAD_CLASS, zs_score=0.50, road_pct=0.10)) is True
    assert combination_filter(pred(zs_class=NO_ROAD_CLASS, zs_score=0.90, road_pct=0.50)) is True


def test_prediction_record_validation():
    with pytest.raises(ValueError):
        pred(score=1.5)
    with pytest.raises(ValueError):
        PredictionRecord("x", 0, "unpaved", 0.9, ROAD_CLASS, 0.9, 0.5)
    with pytest.raises(ValueError):
        PredictionRecord("x", 2, "paved", 0.9, ROAD_CLASS, 0.9, 0.5)


# -------------------------------------------------------------- aggregation


def test_aggregate_single_paved_point():
    out = aggregate_segment("w1", [SegmentObservation(5.0, 0)])
    assert out.label == SurfaceLabel.PAVED
    assert out.weighted_score == 1.0
    assert out.n_points == 1


def test_aggregate_weighted_mix():
    # paved at 5 m (w=25/30) vs unpaved at 29 m (w=1/30) -> 25/26
    out = aggregate_segment("w1", [SegmentObservation(5.0, 0), SegmentObservation(29.0, 1)])
    assert out.weighted_score == pytest.approx(25.0 / 26.0)
    assert out.weighted_score == pytest.approx(0.9615, abs=5e-5)
    assert out.label == SurfaceLabel.PAVED


def test_aggregate_tie_is_unpaved():
    out = aggregate_segment("w1", [SegmentObservation(10.0, 0), SegmentObservation(10.0, 1)])
    assert out.weighted_score == pytest.approx(0.5)
    assert out.label == SurfaceLabel.UNPAVED


def test_aggregate_empty_is_unknown():
    out = aggregate_segment("w1", [])
    assert out.label == SurfaceLabel.UNKNOWN
    assert out.n_points == 0


def test_aggregate_30m_point_still_counts():
    out = aggregate_segment("w1", [SegmentObservation(30.0, 0)])
    assert out.label == SurfaceLabel.PAVED
    assert out.weights_sum == pytest.approx(1.0 / 30.0)


def test_aggregate_permutation_invariant():
    rng = random.Random(5)
    obs = [SegmentObservation(rng.uniform(0, 30), rng.randint(0, 1)) for _ in range(40)]
    base = aggregate_segment("w", obs)
    for _ in range(10):
        rng.shuffle(obs)
        again = aggregate_segment("w", obs)
        assert again.weighted_score == pytest.approx(base.weighted_score, rel=1e-12)
        assert again.label == base.label


def test_aggregate_scaling_distances_never_flips_separated_vote():
    # paved strictly nearer than unpaved; shrinking all distances keeps it paved
    rng = random.Random(9)
    for _ in range(200):
        paved = [SegmentObservation(rng.uniform(0.0, 10.0), 0) for _ in range(3)]
        unpaved = [SegmentObservation(rng.uniform(20.0, 30.0), 1) for _ in range(2)]
        base = aggregate_segment("w", paved + unpaved)
        if base.label != SurfaceLabel.PAVED:
            continue
        for factor in (0.9, 0.5, 0.1):
            scaled = [
                SegmentObservation(o.distance_m * factor, o.pred_label) for o in paved + unpaved
            ]
            assert aggregate_segment("w", scaled).label == SurfaceLabel.PAVED


def test_aggregate_score_weighting_switch():
    obs = [SegmentObservation(5.0, 0, 0.9), SegmentObservation(5.0, 1, 0.1)]
    plain = aggregate_segment("w", obs)
    weighted = aggregate_segment("w", obs, score_weighted=True)
    assert plain.weighted_score == pytest.approx(0.5)
    assert weighted.weighted_score == pytest.approx(0.9)


# ------------------------------------------------------------- label_all


def match(image_id, *assignments):
    if not assignments:
        return MatchResult(image_id=image_id, tier=UNMATCHED)
    nearest = assignments[0][1]
    tier = "T10" if nearest <= 10 else "T20" if nearest <= 20 else "T30"
    return MatchResult(
        image_id=image_id,
        tier=tier,
        assignments=tuple(
            Assignment(
                osm_id=osm,
                distance_m=d,
                abs_diff_m=d - nearest,
                percent_diff=0.0 if d + nearest == 0 else (d - nearest) / (d + nearest),
                closest_point=GeoPoint(0, 0),
            )
            for osm, d in assignments
        ),
    )


def test_label_all_empty_predictions():
    labels, diag = label_all_segments([match("a", ("w1", 5.0))], [])
    assert labels == []
    assert diag.n_missing_prediction == 1


def test_label_all_three_segment_fixture():
    # hand-walked: w1 gets paved@5 and unpaved@15; w2 gets the same image
    # (multi-assignment) plus its own paved@2; w3 only a filtered image.
    results = [
        match("i1", ("w1", 5.0)),
        match("i2", ("w1", 15.0), ("w2", 15.0)),
        match("i3", ("w2", 2.0)),
        match("i4", ("w3", 5.0)),
    ]
    predictions = [
        pred("i1", label=0),
        pred("i2", label=1),
        pred("i3", label=0),
        pred("i4", label=0, zs_class=NO_ROAD_CLASS, zs_score=0.95),
    ]
    labels, diag = label_all_segments(results, predictions)
    by_id = {l.osm_id: l for l in labels}
    assert set(by_id) == {"w1", "w2"}  # w3's only image was filtered out
    w_5, w_15, w_2 = 25 / 30, 15 / 30, 28 / 30
    assert by_id["w1"].weighted_score == pytest.approx(w_5 / (w_5 + w_15))
    assert by_id["w1"].label == SurfaceLabel.PAVED
    assert by_id["w2"].weighted_score == pytest.approx(w_2 / (w_2 + w_15))
    assert by_id["w2"].label == SurfaceLabel.PAVED
    assert by_id["w2"].n_points == 2
    assert diag.n_filtered == 1
    assert diag.n_contributions == 4


def test_label_all_input_order_invariance():
    results = [match(f"i{k}", (f"w{k % 3}", 5.0 + k % 7)) for k in range(30)]
    predictions = [pred(f"i{k}", label=k % 2) for k in range(30)]
    a, _ = label_all_segments(results, predictions)
    b, _ = label_all_segments(list(reversed(results)), list(reversed(predictions)))
    assert [(l.osm_id, l.label, l.weighted_score) for l in a] == [
        (l.osm_id, l.label, l.weighted_score) for l in b
    ]
    assert [l.osm_id for l in a] == sorted(l.osm_id for l in a)


def test_label_all_unmatched_counted():
    labels, diag = label_all_segments([match("a")], [pred("a")])
    assert labels == []
    assert diag.n_unmatched == 1

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import make_labels, point_csv
from reefmap.analytics import (
    class_cover,
    connected_components,
    density,
    instance_length,
    instances_to_csv,
    instances_to_geojson,
    length_summary,
    relative_abundance,
)
from reefmap.errors import (
    EmptySet,
    InputError,
    NoLabeledPixels,
    NonPositiveArea,
    UnknownClass,
)
from reefmap.grids import UNLABELED
from reefmap.ingest import parse_point_predictions


# ---------------------------------------------------------------------------
# class cover
# ---------------------------------------------------------------------------

def test_cover_arithmetic(catalog):
    arr = np.zeros((10, 10), dtype=np.uint8)
    arr[:5, :5] = 1                       # 25 of 100 labeled pixels are class 1
    fractions, areas = class_cover(make_labels(arr, spacing=0.5), catalog)
    assert fractions[1] == pytest.approx(0.25)
    assert areas[1] == pytest.approx(25 * 0.25)   # 6.25 m^2
    assert fractions[0] == pytest.approx(0.75)


def test_cover_single_class(catalog):
    fractions, _ = class_cover(make_labels(np.full((4, 4), 2)), catalog)
    assert fractions[2] == 1.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_cover_fractions_sum_to_one(seed):
    from reefmap.grids import ClassCatalog

    catalog = ClassCatalog.default()
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 6, size=(12, 12))
    arr[arr == 5] = UNLABELED
    if (arr == UNLABELED).all():
        arr[0, 0] = 0
    fractions, _ = class_cover(make_labels(arr), catalog)
    assert fractions.sum() == pytest.approx(1.0, abs=1e-9)


def test_cover_requires_labeled_pixels(catalog):
    with pytest.raises(NoLabeledPixels):
        class_cover(make_labels(np.full((3, 3), UNLABELED)), catalog)


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------

def blob_raster(*blobs, shape=(16, 16), class_id=5):
    arr = np.zeros(shape, dtype=np.uint8)  # class 0 background
    for rows, cols in blobs:
        arr[rows, cols] = class_id
    return make_labels(arr)


def test_two_separated_blobs(catalog6):
    labels = blob_raster((slice(0, 3), slice(0, 3)), (slice(8, 11), slice(8, 11)))
    instances = connected_components(labels, 5, catalog6)
    assert len(instances) == 2


def test_diagonal_touch_is_one_instance_under_8(catalog6):
    arr = np.zeros((8, 8), dtype=np.uint8)
    arr[0:2, 0:2] = 5
    arr[2:4, 2:4] = 5  # touches only at the corner (1,1)-(2,2)
    labels = make_labels(arr)
    assert len(connected_components(labels, 5, catalog6)) == 1
    assert len(connected_components(labels, 5, catalog6, connectivity=4, min_pixels=1)) == 2


def test_min_pixels_filter(catalog6):
    arr = np.zeros((8, 8), dtype=np.uint8)
    arr[0, 0] = 5                    # single-pixel speckle
    arr[4:6, 4:6] = 5                # 4-pixel blob
    instances = connected_components(make_labels(arr), 5, catalog6, min_pixels=4)
    assert len(instances) == 1
    assert instances[0].pixels.shape[0] == 4


def test_components_ordered_by_min_row_then_col(catalog6):
    arr = np.zeros((10, 10), dtype=np.uint8)
    arr[6:8, 0:2] = 5
    arr[0:2, 6:8] = 5
    arr[0:2, 0:2] = 5
    instances = connected_components(make_labels(arr), 5, catalog6, min_pixels=1)
    starts = [(int(r.pixels[:, 1].min()), int(r.pixels[:, 0].min())) for r in instances]
    assert starts == sorted(starts)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("connectivity", [8, 4])
def test_partition_matches_flood_fill(seed, connectivity, catalog6):
    rng = np.random.default_rng(seed)
    arr = np.where(rng.random((16, 16)) < 0.4, 5, 0).astype(np.uint8)
    labels = make_labels(arr)
    instances = connected_components(labels, 5, catalog6,
                                     connectivity=connectivity, min_pixels=1)
    got = {frozenset(map(tuple, r.pixels.tolist())) for r in instances}
    want = oracles.flood_fill_components(arr == 5, connectivity=connectivity)
    assert got == want


def test_components_unknown_class(catalog):
    with pytest.raises(UnknownClass):
        connected_components(make_labels(np.zeros((4, 4))), 9, catalog)
    with pytest.raises(InputError):
        connected_components(make_labels(np.zeros((4, 4))), 0, catalog, connectivity=6)


# ---------------------------------------------------------------------------
# instance length
# ---------------------------------------------------------------------------

def length_of(pixels, spacing=0.01, catalog=None):
    from reefmap.analytics import InstanceRecord

    rec = InstanceRecord(class_id=5, pixels=np.asarray(pixels, dtype=np.int64),
                         area_m2=0.0, length_m=0.0, centroid=(0.0, 0.0))
    return instance_length(rec, spacing)


def test_single_pixel_length_is_spacing():
    assert length_of([(3, 4)], spacing=0.01) == pytest.approx(0.01)


def test_horizontal_run_length():
    pixels = [(c, 2) for c in range(5)]
    assert length_of(pixels, spacing=0.01) == pytest.approx(0.05)


def test_diagonal_length():
    pixels = [(0, 0), (1, 1), (2, 2)]
    want = 2 * math.sqrt(2) * 0.01 + 0.01
    assert length_of(pixels, spacing=0.01) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_length_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    k = rng.integers(1, 40)
    pixels = np.unique(rng.integers(0, 12, size=(k, 2)), axis=0)
    spacing = 0.25
    want = oracles.max_pairwise_distance((pixels + 0.5) * spacing) + spacing
    assert length_of(pixels, spacing) == pytest.approx(want, rel=1e-12)


def test_length_translation_invariant():
    pixels = np.array([(0, 0), (3, 1), (5, 5), (2, 4)])
    a = length_of(pixels)
    b = length_of(pixels + np.array([17, 9]))
    assert a == pytest.approx(b, rel=1e-12)


def test_length_rotation_invariant(catalog6):
    rng = np.random.default_rng(12)
    arr = np.where(rng.random((12, 12)) < 0.3, 5, 0).astype(np.uint8)
    arr[5:8, 5:8] = 5
    base = connected_components(make_labels(arr), 5, catalog6, min_pixels=1)
    rotated = connected_components(make_labels(np.rot90(arr).copy()), 5, catalog6,
                                   min_pixels=1)
    assert sorted(round(r.length_m, 9) for r in base) == \
        sorted(round(r.length_m, 9) for r in rotated)


def test_length_at_least_spacing(catalog6):
    rng = np.random.default_rng(13)
    arr = np.where(rng.random((10, 10)) < 0.3, 5, 0).astype(np.uint8)
    arr[0, 0] = 5
    for rec in connected_components(make_labels(arr, spacing=0.3), 5, catalog6,
                                    min_pixels=1):
        assert rec.length_m >= 0.3


def ellipse_mask(shape, center, a, b, theta):
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]]
    x = (cols + 0.5) - center[0]
    y = (rows + 0.5) - center[1]
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


@pytest.mark.parametrize("theta", [0.0, 0.4, math.pi / 3])
def test_ellipse_major_axis_recovery(theta, catalog6):
    spacing = 0.02
    semi_major = 9.0  # pixels; major axis 18 px >= 10
    mask = ellipse_mask((40, 40), (20.0, 20.0), semi_major, 4.0, theta)
    arr = np.where(mask, 5, 0).astype(np.uint8)
    instances = connected_components(make_labels(arr, spacing=spacing), 5, catalog6)
    assert len(instances) == 1
    want = 2 * semi_major * spacing
    assert abs(instances[0].length_m - want) <= 2 * spacing


def test_instance_metadata(catalog6):
    arr = np.zeros((6, 6), dtype=np.uint8)
    arr[2:4, 1:5] = 5
    labels = make_labels(arr, spacing=0.5)
    rec, = connected_components(labels, 5, catalog6)
    assert rec.area_m2 == pytest.approx(8 * 0.25)
    # cols 1..4 -> mean col 2.5 -> world x = (2.5 + 0.5) * 0.5
    assert rec.centroid[0] == pytest.approx(1.5)
    assert rec.class_id == 5


# ---------------------------------------------------------------------------
# density, length summaries, abundance
# ---------------------------------------------------------------------------

def test_density():
    assert density(range(10), 50.0) == pytest.approx(0.2)
    assert density([], 50.0) == 0.0
    with pytest.raises(NonPositiveArea):
        density([], 0.0)


def test_length_summary_zero_variance():
    mean, se = length_summary([0.2, 0.2, 0.2])
    assert mean == pytest.approx(0.2)
    assert se == pytest.approx(0.0, abs=1e-12)


def test_length_summary_hand_computed():
    mean, se = length_summary([0.1, 0.3])
    assert mean == pytest.approx(0.2)
    assert se == pytest.approx(0.1)  # sd = 0.1414/sqrt(2)


def test_length_summary_single_value():
    assert length_summary([0.42]) == (pytest.approx(0.42), 0.0)


def test_length_summary_report_rendering():
    # the +/- display format used for published figures: mean cm +/- SE cm
    mean, se = length_summary([0.196] * 742)
    assert f"{mean * 100:.1f} +/- {se * 100:.2f} cm" == "19.6 +/- 0.00 cm"


def test_length_summary_empty():
    with pytest.raises(EmptySet):
        length_summary([])


def test_relative_abundance_threshold_count(catalog):
    stream = point_csv(catalog, [
        ("s", 0, 0.0, 0.0, (0.6, 0.0, 0.0, 0.0, 0.0)),
        ("s", 1, 1.0, 0.0, (0.4, 0.0, 0.0, 0.0, 0.0)),
        ("s", 2, 2.0, 0.0, (0.9, 0.0, 0.0, 0.0, 0.0)),
    ])
    pset = parse_point_predictions(stream, catalog)
    freqs = relative_abundance(pset, threshold=0.5)
    assert freqs[0] == pytest.approx(2 / 3)


def test_relative_abundance_multilabel_exceeds_one(catalog):
    stream = point_csv(catalog, [
        ("s", i, float(i), 0.0, (0.9, 0.8, 0.0, 0.0, 0.0)) for i in range(4)
    ])
    pset = parse_point_predictions(stream, catalog)
    freqs = relative_abundance(pset)
    assert freqs.sum() == pytest.approx(2.0)   # does not sum to 1


def test_relative_abundance_unreachable_threshold(catalog):
    stream = point_csv(catalog, [("s", 0, 0.0, 0.0, (1.0, 1.0, 1.0, 1.0, 1.0))])
    pset = parse_point_predictions(stream, catalog)
    assert relative_abundance(pset, threshold=1.01).sum() == 0.0


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def test_exports(catalog6):
    arr = np.zeros((8, 8), dtype=np.uint8)
    arr[1:4, 1:4] = 5
    instances = connected_components(make_labels(arr, spacing=0.5), 5, catalog6)
    text = instances_to_csv(instances)
    assert text.splitlines()[0] == "class,centroid_x,centroid_y,area_m2,length_m"
    assert len(text.splitlines()) == 2
    doc = instances_to_geojson(instances, catalog6)
    assert doc["type"] == "FeatureCollection"
    assert doc["features"][0]["properties"]["class"] == "Sea Cucumber"

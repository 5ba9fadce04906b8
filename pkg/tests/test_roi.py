import numpy as np
import pytest

from respifusion.core import Spectrum
from respifusion.errors import EmptyTrack, NoRoi, OutOfFrame
from respifusion.roi import (AffineTransform, ChestGeometry, LandmarkFrame,
                             Roi, derive_rois, hold_and_retrigger,
                             load_calibration, project_point, save_calibration)

NIR = (336, 190)
FIR = (160, 120)


def test_project_identity():
    t = AffineTransform.identity()
    assert project_point(t, (50.0, 40.0)) == (50.0, 40.0)


def test_project_scale_translate():
    t = AffineTransform(0.5, 0.5, 10.0, 5.0)
    assert project_point(t, (100.0, 60.0)) == (60.0, 35.0)


def test_project_full_frame_scale():
    # mapping the NIR corner onto the FIR corner with resolution-ratio scales
    t = AffineTransform(160.0 / 336.0, 120.0 / 190.0, 0.0, 0.0)
    x, y = project_point(t, (336.0, 190.0))
    assert x == pytest.approx(160.0, abs=1e-9)
    assert y == pytest.approx(120.0, abs=1e-9)


def test_project_out_of_frame():
    t = AffineTransform.identity()
    with pytest.raises(OutOfFrame):
        project_point(t, (170.0, 40.0), bounds=FIR)


def test_roundtrip_inverse():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = AffineTransform(rng.uniform(0.1, 3), rng.uniform(0.1, 3),
                            rng.uniform(-50, 50), rng.uniform(-50, 50))
        p = (rng.uniform(0, 336), rng.uniform(0, 190))
        q = project_point(t.inverse(), project_point(t, p))
        assert abs(q[0] - p[0]) < 1e-9
        assert abs(q[1] - p[1]) < 1e-9


def test_transform_validity():
    with pytest.raises(ValueError):
        AffineTransform(-1.0, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        AffineTransform(1.0, float("nan"), 0.0, 0.0)


def lm(t=0.0, nose=(168.0, 95.0), chin=120.0, valid=True):
    return LandmarkFrame(timestamp=t, nose=nose, chin_y=chin, valid=valid)


def test_nostril_box_centering():
    rois = derive_rois(lm(), NIR, FIR, AffineTransform.identity())
    n = rois.nostril_nir
    assert n.x == pytest.approx(160.5)
    assert n.y == pytest.approx(85.0)
    assert n.w == 15.0
    assert n.h == 20.0


def test_chest_box_geometry():
    g = ChestGeometry(offset_frac=0.15, width_frac=0.6, height_frac=0.35)
    rois = derive_rois(lm(), NIR, FIR, AffineTransform.identity(), g)
    c = rois.chest_nir
    # pre-clamp arithmetic: y = 120 + 0.15*190, h = 0.35*190, w = 0.6*336
    assert c.y == pytest.approx(148.5)
    assert c.h == pytest.approx(66.5)
    assert c.x == pytest.approx(67.2)
    assert c.w == pytest.approx(201.6)


def test_edge_nose_clamped_inside():
    rois = derive_rois(lm(nose=(2.0, 3.0)), NIR, FIR, AffineTransform.identity())
    n = rois.nostril_nir
    assert n.x >= 0 and n.y >= 0
    assert n.x + n.w <= NIR[0]
    assert n.y + n.h <= NIR[1]


def test_rois_inside_frames_randomized():
    rng = np.random.default_rng(1)
    t = AffineTransform(160 / 336, 120 / 190, 2.0, -3.0)
    for _ in range(100):
        nose = (rng.uniform(-10, 346), rng.uniform(-10, 200))
        chin = rng.uniform(0, 220)
        rois = derive_rois(lm(nose=nose, chin=chin), NIR, FIR, t)
        for roi, dims in ((rois.nostril_nir, NIR), (rois.chest_nir, NIR),
                          (rois.nostril_fir, FIR), (rois.chest_fir, FIR)):
            assert roi.x >= -1e-9 and roi.y >= -1e-9
            assert roi.x + roi.w <= dims[0] + 1e-9
            assert roi.y + roi.h <= dims[1] + 1e-9


def test_identity_transform_equal_dims_rois_coincide():
    rois = derive_rois(lm(), NIR, NIR, AffineTransform.identity())
    assert rois.nostril_fir.x == pytest.approx(rois.nostril_nir.x)
    assert rois.chest_fir.w == pytest.approx(rois.chest_nir.w)


def test_invalid_landmark_raises():
    with pytest.raises(NoRoi):
        derive_rois(lm(valid=False), NIR, FIR, AffineTransform.identity())


def test_hold_semantics():
    track = hold_and_retrigger([lm(0.0)], NIR, FIR, AffineTransform.identity())
    held = track.at(5.0)
    assert held is not None
    assert held.nostril_nir.x == pytest.approx(160.5)


def test_retrigger_timeout_gap():
    frames = [lm(0.0), lm(20.0)]
    track = hold_and_retrigger(frames, NIR, FIR, AffineTransform.identity(),
                               retrigger_s=10.0)
    assert track.at(5.0) is not None
    assert track.at(15.0) is None      # inside the (10, 20) gap
    assert track.at(20.0) is not None


def test_all_valid_matches_per_frame_derivation():
    frames = [lm(t=i * 0.5, nose=(160.0 + i, 90.0)) for i in range(10)]
    track = hold_and_retrigger(frames, NIR, FIR, AffineTransform.identity())
    for f in frames:
        got = track.at(f.timestamp)
        want = derive_rois(f, NIR, FIR, AffineTransform.identity())
        assert got.nostril_nir.x == pytest.approx(want.nostril_nir.x)


def test_invalid_frames_hold_then_gap():
    frames = [lm(0.0)] + [lm(t, valid=False) for t in (4.0, 9.0, 12.0)]
    track = hold_and_retrigger(frames, NIR, FIR, AffineTransform.identity(),
                               retrigger_s=10.0)
    assert track.at(4.0) is not None
    assert track.at(9.0) is not None
    assert track.at(12.0) is None
    assert track.n_gaps == 1


def test_empty_track_raises():
    with pytest.raises(EmptyTrack):
        hold_and_retrigger([lm(valid=False)], NIR, FIR, AffineTransform.identity())


def test_calibration_roundtrip(tmp_path):
    t = AffineTransform(0.47619047619, 0.63157894736, 1.25, -2.5)
    path = tmp_path / "calibration.txt"
    save_calibration(path, t)
    back = load_calibration(path)
    assert back == t


def test_calibration_rejects_wrong_count(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("1.0 2.0 3.0\n")
    with pytest.raises(ValueError):
        load_calibration(p)


def test_pixel_slices_round_half_up():
    roi = Roi(x=160.5, y=85.0, w=15.0, h=20.0, spectrum=Spectrum.NIR)
    rows, cols = roi.pixel_slices(190, 336)
    assert cols == slice(161, 176)
    assert rows == slice(85, 105)

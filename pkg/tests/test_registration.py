"""Registration: undistortion, box projection, crop/pad, temporal sync."""

import numpy as np
import pytest

from nerdd import events as ev
from nerdd import registration as reg
from nerdd.annotate import BoxAnnotation

from conftest import make_random_stream


def box(x, y, w, h, frame=0, tid=0):
    return BoxAnnotation(frame, tid, x, y, w, h, "auto")


# ---------------------------------------------------------------- undistort

def test_undistort_zero_coefficients_is_exact_identity(rng):
    img = rng.integers(0, 255, size=(31, 47), dtype=np.uint8)
    intr = reg.Intrinsics(fx=40.0, fy=41.0, cx=23.0, cy=15.0)
    assert np.array_equal(reg.undistort_image(img, intr), img)
    imgf = rng.normal(size=(31, 47, 3))
    assert np.array_equal(reg.undistort_image(imgf, intr), imgf)


def test_undistort_principal_point_fixed():
    img = np.zeros((64, 64), np.uint8)
    img[32, 32] = 200
    intr = reg.Intrinsics(fx=50.0, fy=50.0, cx=32.0, cy=32.0, k1=0.1, k2=0.01, p1=0.001)
    out = reg.undistort_image(img, intr)
    assert out[32, 32] == 200  # r = 0 maps to itself


def _invert_distortion_newton(intr, xd, yd, iters=50):
    """Numerically invert the forward model: find (xn, yn) with
    distort(xn, yn) == (xd, yd). Independent fixed-point route."""
    xn, yn = xd, yd
    for _ in range(iters):
        dx, dy = reg.distort_normalized(np.array(xn), np.array(yn), intr)
        xn = xn - (float(dx) - xd)
        yn = yn - (float(dy) - yd)
    return xn, yn


def test_undistort_corner_against_ray_trace_oracle():
    intr = reg.Intrinsics(fx=60.0, fy=60.0, cx=32.0, cy=32.0, k1=0.1)
    # Implementation route: destination corner pixel samples the source at
    # the forward-distorted position.
    u, v = 0.0, 0.0
    xn, yn = (u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy
    xd, yd = reg.distort_normalized(np.array(xn), np.array(yn), intr)
    sx = float(xd) * intr.fx + intr.cx
    sy = float(yd) * intr.fy + intr.cy
    # Oracle route: numerically invert the distortion at that source point;
    # it must land back on the corner.
    back_x, back_y = _invert_distortion_newton(intr, float(xd), float(yd))
    bu = back_x * intr.fx + intr.cx
    bv = back_y * intr.fy + intr.cy
    assert abs(bu - u) < 0.5 and abs(bv - v) < 0.5
    # and the displacement is real (k1 > 0 pulls corners inward)
    assert np.hypot(sx - u, sy - v) > 1.0


def test_undistort_moves_pixels_as_barrel_distortion_predicts():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 255, size=(64, 64), dtype=np.uint8)
    intr = reg.Intrinsics(fx=60.0, fy=60.0, cx=32.0, cy=32.0, k1=0.1)
    out = reg.undistort_image(img, intr)
    assert out.shape == img.shape
    assert not np.array_equal(out, img)
    # center pixel unchanged
    assert out[32, 32] == img[32, 32]


def test_undistort_rejects_nonfinite_intrinsics():
    with pytest.raises(reg.RegistrationError):
        reg.Intrinsics(fx=np.nan, fy=1.0, cx=0.0, cy=0.0)


# ------------------------------------------------------------ shift_project

def test_shift_zero_is_identity():
    params = reg.RegistrationParams(x_shift=0)
    res = reg.shift_project(box(100, 20, 10, 10), params, reg.EVENT_TO_RGB, 640, 480)
    assert res.box == box(100, 20, 10, 10)
    assert not res.clipped


def test_shift_moves_and_inverts():
    params = reg.RegistrationParams(x_shift=12)
    fwd = reg.shift_project(box(100, 20, 10, 10), params, reg.EVENT_TO_RGB, 640, 480)
    assert fwd.box.x == 112
    back = reg.shift_project(fwd.box, params, reg.RGB_TO_EVENT, 640, 480)
    assert back.box == box(100, 20, 10, 10)


def test_shift_round_trip_random_unclamped(rng):
    params = reg.RegistrationParams(x_shift=17)
    for _ in range(100):
        b = box(float(rng.integers(20, 500)), float(rng.integers(0, 400)),
                float(rng.integers(1, 40)), float(rng.integers(1, 40)))
        fwd = reg.shift_project(b, params, reg.EVENT_TO_RGB, 640, 480)
        if fwd.clipped:
            continue
        back = reg.shift_project(fwd.box, params, reg.RGB_TO_EVENT, 640, 480)
        assert back.box == b


def test_shift_clamps_and_flags_partial():
    # box ends at the right edge; a positive shift pushes it partly out
    params = reg.RegistrationParams(x_shift=5)
    res = reg.shift_project(box(630, 10, 10, 10), params, reg.EVENT_TO_RGB, 640, 480)
    assert res.clipped
    assert res.box.x == 635
    assert res.box.w == 5  # clamped at the destination edge
    assert res.box.x + res.box.w == 640


def test_shift_fully_outside_returns_out_of_view():
    params = reg.RegistrationParams(x_shift=50)
    res = reg.shift_project(box(600, 10, 10, 10), params, reg.EVENT_TO_RGB, 640, 480)
    assert res.box is None
    assert not res.in_view


# -------------------------------------------------------------- crop_pad

def test_crop_pad_identity():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 255, size=(48, 64, 3), dtype=np.uint8)
    params = reg.RegistrationParams()
    out = reg.crop_pad_rgb(img, params, (64, 48))
    assert np.array_equal(out, img)


def test_crop_pad_event_resolution_target():
    img = np.ones((800, 1400, 3), np.uint8)
    params = reg.RegistrationParams(crop_x=60, crop_y=40, crop_w=1280, crop_h=720)
    out = reg.crop_pad_rgb(img, params, (1280, 720))
    assert out.shape == (720, 1280, 3)
    assert (out == 1).all()


def test_crop_pad_asymmetric_against_reference_composition(rng):
    img = rng.integers(0, 255, size=(40, 50), dtype=np.uint8)
    params = reg.RegistrationParams(crop_x=5, crop_y=8, crop_w=30, crop_h=20,
                                    pad_left=7, pad_top=3)
    out = reg.crop_pad_rgb(img, params, (60, 30))
    # reference composition, built independently pixel by pixel
    expected = np.zeros((30, 60), np.uint8)
    for yy in range(20):
        for xx in range(30):
            expected[3 + yy, 7 + xx] = img[8 + yy, 5 + xx]
    assert np.array_equal(out, expected)


def test_crop_pad_output_size_always_target(rng):
    img = rng.integers(0, 255, size=(40, 50), dtype=np.uint8)
    for _ in range(50):
        cw = int(rng.integers(1, 50))
        ch = int(rng.integers(1, 40))
        cx = int(rng.integers(0, 50 - cw + 1))
        cy = int(rng.integers(0, 40 - ch + 1))
        tw = int(rng.integers(cw, cw + 20))
        th = int(rng.integers(ch, ch + 20))
        pl = int(rng.integers(0, tw - cw + 1))
        pt = int(rng.integers(0, th - ch + 1))
        params = reg.RegistrationParams(crop_x=cx, crop_y=cy, crop_w=cw, crop_h=ch,
                                        pad_left=pl, pad_top=pt)
        out = reg.crop_pad_rgb(img, params, (tw, th))
        assert out.shape == (th, tw)


def test_crop_pad_rejects_bad_rectangles():
    img = np.zeros((10, 10), np.uint8)
    with pytest.raises(reg.RegistrationError):
        reg.crop_pad_rgb(img, reg.RegistrationParams(crop_w=20), (10, 10))
    with pytest.raises(reg.RegistrationError):
        reg.crop_pad_rgb(img, reg.RegistrationParams(), (0, 5))


# -------------------------------------------------------- temporal offset

def test_offset_self_correlation_is_zero_lag(rng):
    a = rng.normal(size=64)
    est = reg.estimate_temporal_offset(a, a, 30)
    assert est.lag_frames == 0
    assert est.offset_us == 0
    assert est.score == pytest.approx(1.0)


def test_offset_recovers_seven_frame_delay(rng):
    a = rng.normal(size=96)
    b = np.roll(a, 7)  # b[t] = a[t-7]
    est = reg.estimate_temporal_offset(a[:80], b[7:87], 30)
    # direct construction: b_seg[t] = a_seg[t-7] on the overlap
    est = reg.estimate_temporal_offset(a, b, 30, max_lag=20)
    assert est.lag_frames == 7
    assert est.offset_us == 7 * 33_333 == 233_331


def test_offset_survives_noise(rng):
    a = rng.normal(size=120)
    b = np.roll(a, 7) + 0.2 * np.abs(a).mean() * rng.normal(size=120)
    est = reg.estimate_temporal_offset(a, b, 30, max_lag=15)
    assert est.lag_frames == 7
    assert est.score < 1.0


def test_offset_recovery_property(rng):
    for _ in range(20):
        a = rng.normal(size=100)
        k = int(rng.integers(-10, 11))
        b = np.roll(a, k)
        est = reg.estimate_temporal_offset(a, b, 30, max_lag=10)
        assert est.lag_frames == k


def test_offset_constant_series_raises(rng):
    with pytest.raises(reg.UndefinedOffsetError):
        reg.estimate_temporal_offset(np.ones(32), np.ones(32), 30)
    with pytest.raises(reg.RegistrationError):
        reg.estimate_temporal_offset(np.ones(4), np.ones(4), 30)


# ------------------------------------------------------------ apply_offset

def test_apply_offset_zero_is_identity(rng):
    stream = make_random_stream(rng, 100)
    out, dropped = reg.apply_offset(stream, 0)
    assert dropped == 0
    assert np.array_equal(out.t, stream.t)


def test_apply_offset_shifts_timestamps():
    stream = ev.EventStream.from_events(8, 8, [(100, 0, 0, 0), (200, 1, 1, 1)])
    out, dropped = reg.apply_offset(stream, 10)
    assert dropped == 0
    assert list(out.t) == [90, 190]


def test_apply_offset_past_end_drops_all():
    stream = ev.EventStream.from_events(8, 8, [(100, 0, 0, 0), (200, 1, 1, 1)])
    out, dropped = reg.apply_offset(stream, 1_000)
    assert dropped == 2
    assert len(out) == 0

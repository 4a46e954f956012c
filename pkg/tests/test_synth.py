import numpy as np
import pytest

from defreg.errors import SpecInvalid
from defreg.grid import warp
from defreg.optim import hard_dice
from defreg.synth import (SynthSpec, ball, gen_sinusoid, gen_spheres, generate, invert_ddf,
                          lattice_landmarks, sinusoid_ddf, smooth_field, smooth_texture)


def test_texture_range_and_determinism():
    a = smooth_texture((16, 16, 16), 3)
    assert a.min() == 0.0 and a.max() == 1.0
    np.testing.assert_array_equal(a, smooth_texture((16, 16, 16), 3))
    assert not np.array_equal(a, smooth_texture((16, 16, 16), 4))


def test_smooth_field_amplitude():
    u = smooth_field((12, 12, 12), 1.5, 0)
    assert np.abs(np.asarray(u)).max() == pytest.approx(1.5)


def test_sinusoid_normal_component_vanishes_on_faces():
    u = np.asarray(sinusoid_ddf(16, 2.0))
    for c in range(3):
        face = np.take(u[..., c], [0, -1], axis=c)
        assert np.abs(face).max() < 1e-12
    assert np.abs(u).max() <= 2.0


def test_moving_is_recovered_by_ground_truth():
    case = gen_sinusoid(SynthSpec(size=24, amplitude=2.0, seed=1))
    back = np.asarray(warp(case["moving"], case["gt_ddf"]))
    assert np.abs(back - np.asarray(case["fixed"])).mean() < 0.01


def test_inverse_composes_to_identity():
    u = sinusoid_ddf(16, 1.5)
    w = invert_ddf(u)
    from defreg.transform import compose
    assert np.abs(np.asarray(compose(u, w))).max() < 1e-6


def test_landmarks_correspond():
    case = gen_sinusoid(SynthSpec(size=16, amplitude=2.0, seed=0))
    fixed_pts, moving_pts = case["landmarks"]
    assert fixed_pts.shape == (8, 3)
    np.testing.assert_array_equal(fixed_pts, lattice_landmarks(16))
    gt = np.asarray(case["gt_ddf"])
    for p, q in zip(fixed_pts.astype(int), moving_pts):
        np.testing.assert_allclose(q, p + gt[tuple(p)])


def test_spheres_labels():
    case = gen_spheres(SynthSpec(kind="spheres", size=32, radius=8, offset=(4, 0, 0)))
    fl, ml = np.asarray(case["fixed_label"]), np.asarray(case["moving_label"])
    assert fl.sum() == ball(32, [15.5] * 3, 8).sum()
    assert ml.sum() > fl.sum()
    assert 0.5 < hard_dice(fl, ml) < 0.8


def test_generation_is_deterministic():
    a = generate(SynthSpec(kind="spheres", seed=5))
    b = generate(SynthSpec(kind="spheres", seed=5))
    assert np.array_equal(np.asarray(a["moving"]), np.asarray(b["moving"]))


@pytest.mark.parametrize("kwargs", [{"size": 8}, {"amplitude": 5.0, "size": 32}, {"kind": "cubes"},
                                    {"kind": "spheres", "radius": 14}])
def test_spec_validation(kwargs):
    with pytest.raises(SpecInvalid):
        SynthSpec(**kwargs)

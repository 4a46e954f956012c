import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from defreg.errors import DimsMismatch
from defreg.estimator import DeformableRegistration, check_volume
from defreg.grid import Volume
from defreg.synth import SynthSpec, gen_sinusoid, gen_spheres


def test_params_round_trip():
    est = DeformableRegistration(similarity="ssd", levels=2, iters=[5, 5])
    assert est.get_params()["similarity"] == "ssd"
    other = clone(est)
    assert other.get_params() == est.get_params()
    again = DeformableRegistration.from_config(est.get_config())
    assert again.get_config()["schedule"]["iters"] == [5, 5]


def test_transform_before_fit():
    with pytest.raises(NotFittedError):
        DeformableRegistration().transform(np.zeros((4, 4, 4)))


def test_check_volume():
    assert check_volume(np.zeros((2, 3, 4))).dims == (2, 3, 4)
    with pytest.raises(DimsMismatch):
        check_volume(np.zeros((2, 3)))


def test_fit_transform_improves_alignment():
    case = gen_sinusoid(SynthSpec(size=16, amplitude=1.5, seed=6))
    est = DeformableRegistration(levels=2, iters=[30, 30])
    warped = est.fit_transform(np.asarray(case["fixed"]), np.asarray(case["moving"]))
    before = np.abs(np.asarray(case["moving"]) - np.asarray(case["fixed"])).mean()
    after = np.abs(np.asarray(warped) - np.asarray(case["fixed"])).mean()
    assert after < before
    assert est.ddf_.dims == (16, 16, 16) and len(est.history_) == 60


def test_score_is_dice():
    case = gen_spheres(SynthSpec(kind="spheres", size=16, radius=4, offset=(2, 0, 0)))
    est = DeformableRegistration(weight_image=0.0, weight_label=1.0, levels=2, iters=[40, 40])
    est.fit(case["fixed"], case["moving"], case["fixed_label"], case["moving_label"])
    assert est.score(case["fixed_label"], case["moving_label"]) > 0.85
    nearest = est.transform(case["moving_label"], interp="nearest")
    assert set(np.unique(np.asarray(nearest))) <= {0.0, 1.0}

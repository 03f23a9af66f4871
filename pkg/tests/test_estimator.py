import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lmr import LMRRegressor
from lmr.body_model import build_synthetic_model
from lmr.synth import DatasetConfig, FeatureSpec, MotionConfig, make_dataset

BODY = build_synthetic_model(7, 60)
TRAIN, VAL = make_dataset(
    BODY, DatasetConfig(n_train=6, n_val=2, n_vertices=60, motion=MotionConfig(n_frames=5), features=FeatureSpec(n_features=8))
)
X = np.stack([s.features for s in TRAIN])
Y = np.stack([s.gt_theta for s in TRAIN])


def small(**kw):
    base = dict(pose_hidden=6, shape_hidden=5, camera_hidden=4, n_iter=2, epochs=2, batch_size=3, body_model=BODY)
    return LMRRegressor(**{**base, **kw})


def test_params_and_clone():
    est = small(variant="single_rnn")
    params = est.get_params()
    assert params["variant"] == "single_rnn" and params["n_iter"] == 2
    assert clone(est).get_params()["pose_hidden"] == 6
    est.set_params(epochs=0)
    assert est.epochs == 0


def test_fit_predict_shapes():
    est = small().fit(X, Y)
    assert est.n_features_in_ == 8
    assert est.predict(X).shape == (6, 5, 85)
    assert est.predict(X[0]).shape == (5, 85)
    iters = est.predict_iterations(X)
    assert iters.shape == (2, 6, 5, 85)
    assert np.array_equal(iters[-1], est.predict(X))
    assert est.predict_joints(X[:2]).shape == (2, 5, 24, 3)
    assert len(est.loss_curve_) == 4


def test_score_is_negative_mpjpe():
    est = small().fit(X, Y)
    report = est.evaluate(X, Y)
    assert est.score(X, Y) == pytest.approx(-report.mpjpe)
    assert est.score(X, Y) < 0


def test_fit_is_deterministic():
    a = small().fit(X, Y).predict(X)
    b = small().fit(X, Y).predict(X)
    assert np.array_equal(a, b)


def test_validation_errors():
    with pytest.raises(NotFittedError):
        small().predict(X)
    with pytest.raises(ValueError):
        small().fit(X, Y[..., :80])
    with pytest.raises(ValueError):
        small().fit(X[:, :, :, None], Y)
    with pytest.raises(ValueError):
        small(variant="bogus").fit(X, Y)
    with pytest.raises(ValueError):
        small().fit(np.where(X > 0, np.nan, X), Y)
    est = small(epochs=0).fit(X, Y)
    with pytest.raises(ValueError, match="features"):
        est.predict(X[..., :7])

import numpy as np
import pytest

from dronedet.augmentation import Label, Sample
from dronedet.geometry import BBox, ScoredBox
from dronedet.rescore import (
    Patch,
    PatchClassifier,
    RescorePolicy,
    build_patch_dataset,
    class_histogram,
    crop_resize_patch,
    rescore_detections,
    train_tiny_classifier,
)

CLASS_COLORS = {0: (220, 40, 40), 3: (40, 200, 60), 7: (50, 60, 230)}


def scene(rng, n=12, size=(160, 200)):
    """Gray-ish background with solid-colour objects whose colour encodes the class."""
    h, w = size
    img = rng.uniform(90, 140, size=(h, w, 3))
    labels = []
    classes = list(CLASS_COLORS)
    for i in range(n):
        c = classes[i % len(classes)]
        x, y = (i % 6) * 32 + 2, (i // 6) * 40 + 4
        bw, bh = rng.integers(10, 28), rng.integers(10, 34)
        img[y:y + bh, x:x + bw] = np.array(CLASS_COLORS[c]) + rng.normal(0, 8, size=(bh, bw, 3))
        labels.append(Label(c, BBox(x, y, x + bw, y + bh)))
    return Sample(np.clip(img, 0, 255), labels)


def patch_set(rng, n_scenes=3):
    patches = build_patch_dataset([scene(rng) for _ in range(n_scenes)])
    return [p.pixels for p in patches], [p.class_id for p in patches]


def test_crop_identity_for_64px_box(rng):
    img = rng.uniform(0, 255, size=(80, 90, 3))
    assert np.allclose(crop_resize_patch(img, BBox(5, 7, 69, 71)), img[7:71, 5:69], atol=1e-9)


def test_crop_checkerboard_averages():
    img = np.zeros((2, 2, 3))
    img[0, 0] = img[1, 1] = 255
    # mirrored sample positions pair up to 255, so the patch mean is exactly half
    p = crop_resize_patch(img, BBox(0, 0, 2, 2))
    assert p.shape == (64, 64, 3)
    assert abs(p.mean() - 127.5) < 1e-9
    assert np.allclose(p + p[::-1], 255.0, atol=1e-9)


def test_crop_rejects_zero_area():
    with pytest.raises(ValueError):
        crop_resize_patch(np.zeros((10, 10, 3)), BBox(20, 20, 30, 30))


def test_patch_dataset_counts(rng):
    s = scene(rng, n=9)
    s.labels.append(Label(0, BBox(0, 0, 5, 5), ignore=True))
    patches = build_patch_dataset([s])
    assert len(patches) == 9
    assert class_histogram(patches) == {0: 3, 3: 3, 7: 3}


def test_patch_validates_size():
    with pytest.raises(ValueError):
        Patch(np.zeros((32, 64, 3)), 0)


def test_training_separable_reaches_full_accuracy(rng):
    x, y = patch_set(rng)
    clf = train_tiny_classifier(x, y, epochs=100, lr=0.1, hidden=32)
    assert clf.train_accuracy == 1.0
    assert (clf.predict(x) == np.array(y)).all()
    assert set(clf.classes.tolist()) == set(CLASS_COLORS)


def test_zero_lr_leaves_parameters(rng):
    x, y = patch_set(rng, 1)
    a = train_tiny_classifier(x, y, epochs=5, lr=0.0, hidden=8, seed=3)
    b = train_tiny_classifier(x, y, epochs=0, lr=0.0, hidden=8, seed=3)
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
    assert len(set(a.loss_history)) == 1


def test_softmax_regression_loss_decreases(rng):
    x, y = patch_set(rng, 1)
    clf = train_tiny_classifier(x, y, epochs=40, lr=0.05, hidden=0)
    assert clf.hidden == 0
    assert all(b <= a for a, b in zip(clf.loss_history, clf.loss_history[1:]))


def test_training_needs_two_classes():
    with pytest.raises(ValueError):
        train_tiny_classifier([np.zeros((64, 64, 3))] * 2, [1, 1])


def test_classifier_save_load(rng, tmp_path):
    x, y = patch_set(rng, 1)
    clf = train_tiny_classifier(x, y, epochs=10, hidden=8)
    clf.save(tmp_path / "clf.bin")
    back = PatchClassifier.load(tmp_path / "clf.bin")
    assert np.array_equal(back.predict_proba(x), clf.predict_proba(x))


class FixedClassifier(PatchClassifier):
    def __init__(self, probs):
        super().__init__(np.array([0, 1, 2]), 0.0, np.zeros((1, 3)), np.zeros(3))
        self._p = np.asarray(probs, dtype=float)

    def predict_proba(self, patches):
        return self._p[None]


IMG = np.zeros((50, 50, 3))
DET = ScoredBox(BBox(5, 5, 25, 25), 0.8, 2)


@pytest.mark.parametrize("replace_label,min_conf,probs,expected_cls", [
    (True, 0.5, [0.9, 0.05, 0.05], 0),
    (True, 0.95, [0.9, 0.05, 0.05], 2),
    (False, 0.5, [0.9, 0.05, 0.05], 2),
    (True, 0.5, [0.4, 0.3, 0.3], 2),
])
def test_policy_truth_table(replace_label, min_conf, probs, expected_cls):
    pol = RescorePolicy(replace_label, min_conf, "keep")
    (out,) = rescore_detections([DET], IMG, FixedClassifier(probs), pol)
    assert out.class_id == expected_cls
    assert out.score == DET.score and out.box == DET.box


def test_multiply_uses_final_class_probability():
    (out,) = rescore_detections([DET], IMG, FixedClassifier([0.7, 0.1, 0.2]), RescorePolicy(score_combine="multiply"))
    assert out.class_id == 0 and out.score == pytest.approx(0.8 * 0.7)
    pol = RescorePolicy(replace_label=False, score_combine="multiply")
    (out,) = rescore_detections([DET], IMG, FixedClassifier([0.7, 0.1, 0.2]), pol)
    assert out.class_id == 2 and out.score == pytest.approx(0.8 * 0.2)


def test_policy_validation():
    with pytest.raises(ValueError):
        RescorePolicy(score_combine="max")
    with pytest.raises(ValueError):
        RescorePolicy(min_classifier_conf=1.5)


def test_rescore_restores_corrupted_labels(rng):
    x, y = patch_set(rng)
    clf = train_tiny_classifier(x, y, epochs=100, hidden=32)
    s = scene(rng)
    classes = list(CLASS_COLORS)
    dets = []
    for i, lab in enumerate(s.labels):
        c = lab.class_id
        if i % 3 == 0:
            c = classes[(classes.index(c) + 1) % 3]
        dets.append(ScoredBox(lab.box, 0.6, c))
    out = rescore_detections(dets, s.image, clf)
    correct = sum(o.class_id == l.class_id for o, l in zip(out, s.labels))
    assert correct / len(out) >= 0.95
    assert [o.box for o in out] == [d.box for d in dets]
    assert [o.score for o in out] == [d.score for d in dets]

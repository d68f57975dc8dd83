import math

import numpy as np
import pytest

from ovmot.core import BACKGROUND_ID
from ovmot.vocab import (
    ClassifierConfig,
    ClassVocabulary,
    DistillSample,
    VocabClass,
    class_affinities,
    classify,
    loss_image,
    loss_text,
)

S2 = 1 / math.sqrt(2)


@pytest.fixture
def vocab2():
    return ClassVocabulary([VocabClass(1, "cat", [0.0, 1.0])], [1.0, 0.0])


def random_vocab(rng, n, d):
    return ClassVocabulary(
        [VocabClass(i, f"c{i}", rng.normal(size=d), "base" if i % 2 else "novel") for i in range(n)],
        rng.normal(size=d),
    )


class TestAffinities:
    def test_background_query(self):
        v = ClassVocabulary([VocabClass(1, "a", [0, 1, 0]), VocabClass(2, "b", [0, 0, 1])], [1, 0, 0])
        np.testing.assert_allclose(class_affinities([1, 0, 0], v), [1, 0, 0])

    def test_orthonormal(self, vocab2):
        np.testing.assert_allclose(class_affinities([0, 1], vocab2), [0, 1])

    def test_diagonal(self, vocab2):
        np.testing.assert_allclose(class_affinities([S2, S2], vocab2), [S2, S2], atol=1e-12)

    def test_dimension_mismatch(self, vocab2):
        with pytest.raises(ValueError):
            class_affinities([1, 0, 0], vocab2)

    def test_scale_invariance(self, rng):
        for _ in range(200):
            v = random_vocab(rng, 5, 8)
            t = rng.normal(size=8)
            np.testing.assert_allclose(class_affinities(3.7 * t, v), class_affinities(t, v), atol=1e-12)


class TestClassify:
    def test_two_term_softmax(self, vocab2):
        probs, cid = classify([0, 1], vocab2, ClassifierConfig(1.0))
        # 1 / (1 + e) and e / (1 + e)
        np.testing.assert_allclose(probs, [0.2689414213699951, 0.7310585786300049], atol=1e-12)
        assert cid == 1

    def test_uniform_prefers_background(self):
        v = ClassVocabulary([VocabClass(1, "a", [0, 1, 0]), VocabClass(2, "b", [0, 0, 1])], [1, 0, 0])
        # the diagonal (1,1,1)/sqrt(3) has equal affinity to all three
        probs, cid = classify([1, 1, 1], v, ClassifierConfig(0.5))
        np.testing.assert_allclose(probs, [1 / 3] * 3, atol=1e-12)
        assert cid == BACKGROUND_ID

    def test_sharp_temperature(self, vocab2):
        probs, cid = classify([0, 1], vocab2, ClassifierConfig(0.07))
        assert probs[1] == pytest.approx(1 / (1 + math.exp(-1 / 0.07)), rel=1e-12)
        assert 1 - probs[1] == pytest.approx(6.2e-7, rel=0.02)
        assert cid == 1

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            ClassifierConfig(0.0)


class TestLosses:
    def test_symmetric_affinities_give_ln2(self, vocab2):
        s = DistillSample([S2, S2], [0.0], [0.0], label=1)
        assert loss_text([s], vocab2, ClassifierConfig(1.0)) == pytest.approx(math.log(2), abs=1e-12)

    def test_text_loss_value(self, vocab2):
        s = DistillSample([0, 1], [0.0], [0.0], label=1)
        want = -math.log(math.e / (1 + math.e))
        assert loss_text([s], vocab2, ClassifierConfig(1.0)) == pytest.approx(want, abs=1e-12)
        assert want == pytest.approx(0.3133, abs=1e-4)
        assert loss_text([s, s], vocab2, ClassifierConfig(1.0)) == pytest.approx(want, abs=1e-12)

    def test_text_loss_errors(self, vocab2):
        with pytest.raises(ValueError):
            loss_text([], vocab2)
        with pytest.raises(ValueError):
            loss_text([DistillSample([0, 1], [0.0], [0.0], label=99)], vocab2)

    def test_text_loss_non_negative(self, rng):
        v = random_vocab(rng, 4, 6)
        for _ in range(100):
            s = DistillSample(rng.normal(size=6), [0.0], [0.0], label=int(rng.integers(-1, 4)))
            assert loss_text([s], v) >= 0.0

    def test_image_loss(self):
        same = DistillSample([0], [1.0, 2.0], [1.0, 2.0])
        assert loss_image([same]) == 0.0
        assert loss_image([DistillSample([0], [0.5, -0.5], [0.0, 0.0])]) == 1.0
        a = DistillSample([0], [1.0, 0.0], [0.0, 0.0])
        b = DistillSample([0], [1.0, 2.0], [0.0, 0.0])
        assert loss_image([a, b]) == 2.0
        with pytest.raises(ValueError):
            loss_image([])

    def test_image_loss_metric(self, rng):
        for _ in range(100):
            x, y, z = rng.normal(size=(3, 5))
            d = lambda p, q: loss_image([DistillSample([0], p, q)])  # noqa: E731
            assert d(x, y) == pytest.approx(d(y, x))
            assert d(x, z) <= d(x, y) + d(y, z) + 1e-12


class TestVocabulary:
    def test_reserved_id(self):
        with pytest.raises(ValueError):
            VocabClass(BACKGROUND_ID, "bg", [1.0])

    def test_duplicate_ids(self):
        with pytest.raises(ValueError):
            ClassVocabulary([VocabClass(1, "a", [1, 0]), VocabClass(1, "b", [0, 1])], [1, 1])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ClassVocabulary([VocabClass(1, "a", [1, 0, 0])], [1, 1])

    def test_splits(self):
        v = ClassVocabulary([VocabClass(1, "a", [1, 0], "base"), VocabClass(2, "b", [0, 1], "novel")], [1, 1])
        assert v.split_ids("base") == {1}
        assert v.split_ids("novel") == {2}
        assert v.ids == [BACKGROUND_ID, 1, 2]

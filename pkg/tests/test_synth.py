import numpy as np
import pytest

from hiersearch import random_taxonomy, synthesize
from hiersearch.errors import BadSigma, UnknownNode


class TestSynthesize:
    def test_zero_noise_is_prototype(self, t0):
        ds = synthesize(t0, per_class=4, sigma=0.0)
        for r in ds.train + ds.test:
            x = r.raw_features / np.linalg.norm(r.raw_features)
            np.testing.assert_array_equal(x, ds.table[r.label])

    def test_defaults_and_split(self, t0):
        ds = synthesize(t0)
        assert len(ds.train) == 5 * 40 and len(ds.test) == 5 * 10
        assert ds.params["per_class"] == 50
        assert {r.label for r in ds.train} == set(t0.leaf_ids)

    def test_unseen_only_in_test(self, t0):
        ds = synthesize(t0, per_class=10, unseen=["lodi_tomb"])
        assert "lodi_tomb" not in {r.label for r in ds.train}
        assert sum(r.label == "lodi_tomb" for r in ds.test) == 10
        assert ds.unseen == ("lodi_tomb",)

    def test_errors(self, t0):
        with pytest.raises(BadSigma):
            synthesize(t0, sigma=-0.1)
        with pytest.raises(UnknownNode):
            synthesize(t0, unseen=["qutub_minar"])

    def test_deterministic_per_seed(self):
        tax = random_taxonomy((2, 3, 4, 6), rng=1)
        a = synthesize(tax, per_class=5, seed=3, descriptor_dim=4)
        b = synthesize(tax, per_class=5, seed=3, descriptor_dim=4)
        c = synthesize(tax, per_class=5, seed=4, descriptor_dim=4)
        for ra, rb in zip(a.train, b.train):
            assert ra.raw_features.tobytes() == rb.raw_features.tobytes()
            assert ra.rerank_descriptor.tobytes() == rb.rerank_descriptor.tobytes()
        assert a.train[0].raw_features.tobytes() != c.train[0].raw_features.tobytes()

    def test_noise_scale(self):
        tax = random_taxonomy((2, 3, 4, 6), rng=2)
        ds = synthesize(tax, per_class=200, sigma=0.5, train_fraction=1.0)
        resid = np.array([r.raw_features - ds.table[r.label] for r in ds.train])
        assert resid.std() == pytest.approx(0.5, rel=0.05)

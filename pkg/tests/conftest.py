import numpy as np
import pytest

from prefopt.dataio import SyntheticOracleConfig, synth_generate
from prefopt.ifmodel.network import ModelDims, init_params
from prefopt.paratope import LabeledExample, ResidueLabels

SMALL_DIMS = ModelDims(d=8, heads=2, k=4)


@pytest.fixture(scope="session")
def small_synth():
    return synth_generate(SyntheticOracleConfig(seed=3, n_assays=2, variants_per_assay=40,
                                                heavy_length=10, antigen_length=6, region_start=3,
                                                region_length=4, max_mutations=3))


@pytest.fixture
def small_params():
    return init_params(SMALL_DIMS, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def separable_examples(seed, n_antibodies=6, n=40, d=16):
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=d)
    out = []
    for a in range(n_antibodies):
        x = rng.normal(size=(n, d))
        margin = x @ direction
        keep = np.abs(margin) > 0.5  # leave a gap between the classes
        labels = (margin > 0).astype(float)
        out.append(LabeledExample(f"ab{a}", x, ResidueLabels(labels, keep.astype(float))))
    return out

import numpy as np
import pytest

from posenas import data_model as dm
from posenas import kernels, spmf


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def synth_samples():
    cfg = dm.SynthConfig(num_classes=3, samples_per_class=6, frames=16, subjects=(1, 2, 3, 4, 5))
    return dm.generate_synthetic_actions(cfg, 0)


@pytest.fixture(scope="session")
def small_images(synth_samples):
    enc = spmf.EncoderConfig(16, 16)
    return [spmf.SPMFImage(im.pixels, im.sample_id, im.label, "train")
            for im in spmf.encode_samples(synth_samples, enc)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

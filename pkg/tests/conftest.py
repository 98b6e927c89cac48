import numpy as np
import pytest
import torch

from lumen2he.dataset import Domain, DomainDataset
from lumen2he.models import DiscriminatorConfig, GeneratorConfig

torch.set_num_threads(1)

MICRO_G = GeneratorConfig(base_filters=4, n_residual_blocks=1)
MICRO_D = DiscriminatorConfig(base_filters=4)


def random_domain(domain, n, size, seed):
    rng = np.random.default_rng(seed)
    return DomainDataset.from_arrays(domain, [rng.random((size, size, 3)) for _ in range(n)], size)


@pytest.fixture
def micro_domains():
    """Factory for small in-memory (A, B) datasets at 16×16."""

    def make(n_a=1, n_b=1, size=16, seed=0):
        return (random_domain(Domain.A_fluorescence, n_a, size, seed),
                random_domain(Domain.B_HE, n_b, size, seed + 100))

    return make


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory):
    """A 4-epoch micro run at 16×16 with checkpoints at epochs 1..4."""
    from lumen2he.trainer import TrainConfig, fit

    out = tmp_path_factory.mktemp("micro_run")
    ds_a = random_domain(Domain.A_fluorescence, 1, 16, 0)
    ds_b = random_domain(Domain.B_HE, 1, 16, 1)
    cfg = TrainConfig(epochs=4, decay_start_epoch=2, checkpoint_every=1, seed=0)
    fit(cfg, ds_a, ds_b, out, gen_cfg=MICRO_G, disc_cfg=MICRO_D,
        run_config={"image_size": 16, "percentiles": [1.0, 99.0]})
    return out

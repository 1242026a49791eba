import numpy as np
import pytest

import marginleak as ml


@pytest.fixture(scope="session")
def symmetric_pair_run():
    """One well-trained run on {(-1, -1), (+1, +1)}, shared across tests."""
    data = ml.LabeledDataset(np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0]))
    cfg = ml.TrainConfig(
        width=8,
        loss_kind="exponential",
        init_scale=1e-2,
        learning_rate=1e-2,
        lr_growth=1.02,
        max_steps=4000,
        loss_target=1e-8,
        kkt_residual_target=1e-3,
        rng_seed=1,
        checkpoint_every=100,
    )
    net, trace = ml.train(data, cfg)
    return data, cfg, net, trace

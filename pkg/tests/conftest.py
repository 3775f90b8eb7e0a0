import pytest

from pcnnbench.data import generate_synthetic_frame, split_dataset
from pcnnbench.env import EnvConfig, ZoneEnv
from pcnnbench.pcnn import PcnnTrainConfig, pcnn_train


@pytest.fixture(scope="session")
def small_world():
    """A 30-day synthetic data set with a briefly trained PCNN: (model, split, env)."""
    frame = generate_synthetic_frame(30, seed=11, start="2021-09-01")
    split = split_dataset(frame)
    cfg = PcnnTrainConfig(epochs=3, batches_per_epoch=10, batch_size=16, horizon=24, hidden=(8, 8),
                          n_val_windows=32)
    model = pcnn_train(split.train, cfg, seed=0)
    return model, split, ZoneEnv(model, EnvConfig())

import numpy as np
import pytest

import puzzlecam as pc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    """A small on-disk synthetic dataset shared across tests."""
    root = tmp_path_factory.mktemp("micro_ds")
    cfg = pc.SyntheticConfig(num_images=12, canvas_size=72, seed=5)
    return pc.make_synthetic(cfg, root)


@pytest.fixture(scope="session")
def micro_train_config():
    """Tiny but real training configuration reused by loop-level tests."""
    def build(out_dir, **overrides):
        base = dict(
            epochs=2,
            batch_size=4,
            learning_rate=0.05,
            augmentation=pc.AugmentationConfig(rescale_range=(48, 72), crop_size=64),
            backbone=pc.BackboneSpec(widths=(8, 16, 32, 64)),
            out_dir=str(out_dir),
            seed=9,
            log_interval=1,
            deterministic=True,
        )
        base.update(overrides)
        return pc.TrainConfig(**base)

    return build

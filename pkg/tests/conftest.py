import dataclasses
from pathlib import Path

import numpy as np
import pytest

from spai.backbone import load_pretrained, pretrain_toy
from spai.detector import save_detector
from spai.evaluation import load_manifest
from spai.toydata import make_toy_dataset
from spai.training import AugmentationPolicy, TrainConfig, fit


@dataclasses.dataclass
class ToyWorkspace:
    """Everything the heavyweight tests share: a toy dataset, a pretext
    checkpoint, and a trained detector. Built once per session."""

    root: Path
    train_manifest: Path
    val_manifest: Path
    backbone_path: Path
    pretext_log: list
    detector_path: Path
    fit_result: object
    train_config: TrainConfig
    policy: AugmentationPolicy
    fit_seconds: float


@pytest.fixture(scope="session")
def toy_workspace(tmp_path_factory) -> ToyWorkspace:
    import time

    root = tmp_path_factory.mktemp("toy_workspace")
    train_manifest, val_manifest = make_toy_dataset(
        root / "data", n_train=150, n_val=40, side=64, flatten_radius=10.0, seed=3
    )
    backbone_path = root / "backbone.pt"
    pretext_log = pretrain_toy(
        root / "data" / "real",
        backbone_path,
        steps=200,
        batch_size=16,
        lr=1e-3,
        radius=4.0,
        seed=0,
    )
    encoder = load_pretrained(backbone_path)
    config = TrainConfig.toy(epochs=10, seed=0)
    policy = AugmentationPolicy.toy(view_side=32)
    start = time.perf_counter()
    result = fit(
        load_manifest(train_manifest),
        load_manifest(val_manifest),
        encoder,
        config,
        policy,
    )
    fit_seconds = time.perf_counter() - start
    detector_path = root / "detector.pt"
    save_detector(result.detector, detector_path, policy, config, backbone_path)
    return ToyWorkspace(
        root=root,
        train_manifest=train_manifest,
        val_manifest=val_manifest,
        backbone_path=backbone_path,
        pretext_log=pretext_log,
        detector_path=detector_path,
        fit_result=result,
        train_config=config,
        policy=policy,
        fit_seconds=fit_seconds,
    )


@pytest.fixture(scope="session")
def toy_backbone(toy_workspace):
    return load_pretrained(toy_workspace.backbone_path)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_uint8_image(rng, height, width, channels=3):
    return rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8)

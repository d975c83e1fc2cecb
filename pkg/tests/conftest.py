import numpy as np
import pytest

from roigin.synth import SignalSpec, generate, to_graph_dataset


@pytest.fixture(scope="session")
def tiny_dataset():
    """24 subjects, 12 regions: enough structure for trainer plumbing tests."""
    spec = SignalSpec(salient_rois=(1, 4, 7), noise_sd=0.2)
    synth = generate(n_subjects=24, n_regions=12, t_samples=40, spec=spec, seed=5)
    return to_graph_dataset(synth, edge_keep_pct=1.0)


def tiny_model_config(**overrides):
    from roigin.model import ModelConfig

    base = dict(
        layer_dims=(4, 5, 6),
        pool_ratios=(0.6, 0.6, 0.6),
        clusters_k=3,
        aggregation="sum",
        readout="sero",
        edge_keep_pct=1.0,
    )
    base.update(overrides)
    return ModelConfig(**base)

import sys

import numpy as np
import pytest

from livr_lab.model import LoraConfig, ModelConfig, init_model
from livr_lab.vocab import LatentConfig


def tiny_config(K=2, d_model=16, n_layers=2, n_heads=2, image_size=(8, 8, 6), patch_size=4,
                lora_dropout=0.05, **kw):
    return ModelConfig(d_model=d_model, n_layers=n_layers, n_heads=n_heads, mlp_ratio=2,
                       image_size=image_size, patch_size=patch_size, latent=LatentConfig(K=K),
                       lora=LoraConfig(rank=2, alpha=4, dropout=lora_dropout), **kw)


def tiny_model(seed=0, **kw):
    return init_model(tiny_config(**kw), seed)


def perturb_adapters(model, rng, scale=0.3):
    """Move LoRA B off zero so adapter gradients and outputs are not degenerate."""
    for k, p in model.params.items():
        if k.endswith(".lora_b"):
            p.data = rng.normal(0.0, scale, size=p.shape)


def random_image(rng, shape=(8, 8, 6)):
    return rng.uniform(0.0, 1.0, size=shape)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

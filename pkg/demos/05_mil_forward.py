"""A toy slide through the padding-token MIL model.

Non-tissue patches are replaced by a shared token before anything mixes, so
whatever sits under the mask cannot reach the slide feature.
"""

import numpy as np

from scan2d.grid import MaskedGrid
from scan2d.model import AttentionWeights, BlockWeights, ModelConfig, mil_forward

rng = np.random.default_rng(0)
cfg = ModelConfig(d_model=16)
blocks = [BlockWeights.init(cfg, seed=0)]
attention = AttentionWeights.init(cfg.d_model, cfg.attn_hidden, seed=1)

H, W = 8, 8
patches = rng.standard_normal((H, W, cfg.d_model))
tissue = np.zeros((H, W), bool)
tissue[1:7, 2:8] = True
token = rng.standard_normal(cfg.d_model) * 0.1

slide = mil_forward(MaskedGrid(patches, tissue, token), blocks, attention, tile=4)
print("slide feature:", np.round(slide.aggregate[:6], 4), "...")
print("attention mass on tissue:", slide.attention[tissue].sum())
print("attention map (x100):")
print(np.round(slide.attention * 100, 1))

junk = patches.copy()
junk[~tissue] = 1e3
again = mil_forward(MaskedGrid(junk, tissue, token), blocks, attention, tile=4)
print("unchanged after editing masked patches:", np.array_equal(slide.aggregate, again.aggregate))

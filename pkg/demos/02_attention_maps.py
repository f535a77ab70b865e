"""
Looking at attention weights
============================

Every attention layer stores its (batch, heads, T, T) weights after a
forward pass.  Rows are probability distributions over positions.
"""

# %%
import numpy as np
from nial import data as D
from nial import model as M
from nial.tensor import no_grad

ds = D.preprocess(D.synth_dataset(2, 187, 5, 0.05, seed=0))
model = M.build(M.ModelConfig.mitbih(), seed=0).eval()
print(model.config.sequence_lengths())

# %%
with no_grad():
    logits = model(ds.signals[:, None, :])
maps = model.attention_maps
print(len(maps), "layers, weights shape", maps[0].shape)
print("row sums within", np.abs(maps[0].sum(-1) - 1).max())

# %%
# which downsampled positions does head 0 of layer 0 attend to, per sample
for i, w in enumerate(maps[0][:, 0]):
    print(i, "label", ds.labels[i], "top positions", np.argsort(w.mean(0))[-5:][::-1])

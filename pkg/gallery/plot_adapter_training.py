"""
Adapter-only training on a frozen backbone
==========================================

The ViT backbone is a fixed random initialization that never changes. Only
the FBNM/FBFE adapter and the decoder head train. We fit a couple of
hundred steps on synthetic camouflage data and compare against the
untouched zero-init adapter.
"""

import numpy as np

from fgsa.adapter import AdapterConfig
from fgsa.backbone import BackboneConfig
from fgsa.config import TrainConfig
from fgsa.data import SynthConfig, generate
from fgsa.model import FGSANet
from fgsa.train import backbone_digest, dataset_loss, evaluate, train

synth = SynthConfig(n_train=32, n_test=16)
train_set, test_set = generate(synth, "train"), generate(synth, "test")

model = FGSANet(BackboneConfig(), AdapterConfig(), seed=0)
baseline = FGSANet(BackboneConfig(), AdapterConfig(), seed=0)
params = model.param_set()
print(f"trainable {params.count(True)}  frozen {params.count(False)}  "
      f"fraction {params.trainable_fraction():.3f}")

# %%
# Train. The hash of the frozen weights is taken before and after.
before = backbone_digest(model)
print("initial loss", round(dataset_loss(model, train_set), 4))


def log(epoch, res):
    if epoch % 4 == 0:
        print(f"epoch {epoch + 1:3d}  step {res.steps:4d}  loss {res.epoch_losses[-1]:.4f}")


train(model, train_set, TrainConfig(epochs=50, max_steps=200), on_epoch=log)
print("final loss", round(dataset_loss(model, train_set), 4))
print("backbone unchanged:", backbone_digest(model) == before)

# %%
# Test-split metrics, trained vs untrained.
for name, m in (("untrained", baseline), ("trained", model)):
    rep, preds = evaluate(m, test_set)
    print(f"{name:9s} S {rep.s_alpha:.3f}  E {rep.e_phi:.3f}  Fw {rep.f_w_beta:.3f}  MAE {rep.mae:.3f}")
print("mean predicted foreground area:", np.mean([p.mean() for p in preds]).round(3))

"""
Training one conditional field and segmenting a new image
=========================================================

A concat decoder with local codes (the quickest learner of the seven) on
synthetic aerial-style scenes. The config is shrunk so the script finishes
in about a minute; the full desk settings live in ``benchmark.ini``.
"""

import tempfile
from pathlib import Path

import numpy as np

from nfseg import data as D
from nfseg.harness import ExperimentConfig, evaluate, load_dataset, predict, train

config = ExperimentConfig(strategy="concat", code_source="local", hidden=64, channels=64,
                          n_train=120, n_val=8, n_test=8, batch_size=8, lr=1e-3,
                          max_epochs=40)
print(config.to_text())

# the synthetic scenes: roads with stripes, buildings, trees, cars, clutter
scene = D.generate_synthetic(0)
print("one scene:", scene.image.shape, "class pixel counts", D.class_histogram([scene]))

# %%
# Training keeps the checkpoint with the best validation IoU; the log holds
# one line per validation pass.
dataset = load_dataset(config)
result = train(config, dataset)
print(result.log_text())

report = evaluate(result.checkpoint, dataset.test)
print(report.table(D.CLASS_NAMES))

# %%
# Dense prediction queries every pixel center and writes a color-coded mask.
out = Path(tempfile.mkdtemp()) / "mask.png"
mask, rgb = predict(result.checkpoint, dataset.test[0].image, out)
print("predicted classes:", np.unique(mask), "written to", out)
print("pixel accuracy on this image:", float((mask == dataset.test[0].mask).mean()))

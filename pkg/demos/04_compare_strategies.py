"""
Comparing conditioning strategies
=================================

Concat, FiLM and cross-attention decoders fed with global, local or
combined codes (or feature tokens), trained on the same data and scored on
the same test scenes. This is a miniature of ``run_benchmark.py``: three of
the seven strategies, one seed, one image size, a few minutes on one core.
Small models first sit on the "everything is road" solution (IoU about
0.65 here); the training budget below is about what it takes to leave it.
"""

from nfseg.harness import ExperimentConfig, compare

config = ExperimentConfig(hidden=64, channels=64, heads=4, n_train=120, n_val=8, n_test=8,
                          batch_size=8, lr=1e-3, max_epochs=30)
strategies = [("concat", "global"), ("concat", "local"), ("cross_attention", "tokens")]
result = compare(config, seeds=[0], sizes=[64], strategies=strategies)

# medians over seeds, parameter counts (ours, then the full-scale model's), each seed's IoU
print(result.table())

# a global code has to describe the whole scene in one vector; the local code
# keeps the layout. Cross-attention also keeps it, but at 64 pixels it sees only
# 2x2 = 4 tokens and is the slowest learner, so on this budget it usually trails
# (the recorded benchmark shows the same at 64 pixels, and the reverse at 128)
print(result.trend_text())

# the CSV leaves runtime blank so identical seeds give byte-identical files
print(result.to_csv())

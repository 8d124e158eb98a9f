"""
From a query point to a conditioning code
=========================================

A neural field decodes one image location at a time. Each location is a
point in the unit square; the decoder sees its Fourier embedding together
with a code summarising the image. This script walks through the four code
kinds on a small hand-made feature map.
"""

import numpy as np

from nfseg import fields

# the embedding of a single coordinate: sines first, then cosines,
# at frequencies pi * 2^i for i = 0..l
print("embed(0.5, l=2) =", fields.fourier_embed(0.5, 2))

# a 2D point gets both coordinates embedded and concatenated: 4 (l + 1) values
p = fields.embed_point((0.25, 0.75), 4)
print("point embedding width at l=4:", p.shape[0])

# %%
# A feature map with 2 channels on a 2x3 grid.
F = np.array([[[0.0, 1.0, 2.0],
               [3.0, 4.0, 5.0]],
              [[1.0, 1.0, 1.0],
               [-1.0, -1.0, -1.0]]])

# the global code averages over space: the same vector for every point
print("global code:", fields.global_code(F).data)

# the local code interpolates bilinearly; cell centers return the cell exactly
centers = fields.cell_centers(2, 3)
print("cell centers (x, y):\n", centers)
print("local code at the centers:\n", fields.local_code(F, centers).data)

# halfway between two centers the code is their average
print("local code at (1/3, 0.25):", fields.local_code(F, (1 / 3, 0.25)).data)

# %%
# The combined code stacks both, and the token set turns each cell into one
# token (its features plus the embedding of its center) for cross-attention.
coords = np.array([[0.1, 0.1], [0.9, 0.6]])
print("combined code shape:", fields.combined_code(F, coords).data.shape)
tokens = fields.feature_tokens(F, 4)
print("tokens:", tokens.data.shape, "= cells x (channels + point embedding)")

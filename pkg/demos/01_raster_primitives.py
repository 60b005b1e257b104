"""Raster primitives: exact distance transform, components, morphology, RLE.

Run: python3 demos/01_raster_primitives.py
"""

import numpy as np

from maskforge import (
    connected_components,
    dilate,
    distance_transform,
    erode,
    rle_decode,
    rle_encode,
    tight_box,
)
from maskforge.rasters import disk

rng = np.random.default_rng(0)

# a blobby mask: two disks plus salt noise
m = disk(9, 16, 14, 40, 48) | disk(6, 24, 34, 40, 48)
m |= rng.random((40, 48)) < 0.01

d = distance_transform(m)
print("distance transform: max depth", d.max(), "at", np.unravel_index(d.argmax(), d.shape))

labels, count = connected_components(m, connectivity=8)
print("connected components:", count)
print("tight box:", tight_box(m))

closed = erode(dilate(m, 2), 2)
print("closing keeps original foreground:", bool(np.all(closed[m])))

rle = rle_encode(m)
print("RLE runs:", len(rle.counts), "| round-trip exact:",
      bool(np.array_equal(rle_decode(rle), m)))

# render the distance field as coarse ASCII contours
for y in range(0, 40, 4):
    row = "".join(" .:-=+*#%@"[min(9, int(d[y, x]))] for x in range(0, 48, 2))
    print(row)

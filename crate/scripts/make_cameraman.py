"""Write testdata/cameraman.pgm: the 256x256 8-bit Cameraman test image.

scikit-image ships a 512x512 copy; it is reduced by 2x2 box averaging.
The file is not committed to the repository.
"""
import os
import sys

import numpy as np
from skimage import data

out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
    os.path.dirname(__file__), "..", "testdata", "cameraman.pgm")
img = data.camera().astype(np.uint32)
small = (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2] + 2) // 4
small = small.astype(np.uint8)
os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
with open(out, "wb") as f:
    f.write(b"P5\n256 256\n255\n")
    f.write(small.tobytes())
print(out)

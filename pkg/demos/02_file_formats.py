"""
PFM, PGM, checkpoints and JSON
==============================

Float maps use PFM (bottom-up rows, scale sign for endianness), images
use binary PGM, and parameters go to a small DRSK checkpoint format.
"""

import tempfile
from pathlib import Path

import numpy as np

from drstereo.gridcore import ParamStore
from drstereo.stereoio import (load_checkpoint, read_disparity, read_pfm, read_pgm,
                               save_checkpoint, write_json, write_pfm, write_pgm)

tmp = Path(tempfile.mkdtemp())
rng = np.random.default_rng(1)

# PFM round trip is bit-exact
grid = rng.standard_normal((3, 4)).astype(np.float32)
write_pfm(tmp / "grid.pfm", grid)
print("PFM identical:", read_pfm(tmp / "grid.pfm").tobytes() == grid.tobytes())

# infinity marks unknown disparity and becomes invalid on ingest
disp = np.array([[1.0, np.inf], [2.5, 3.0]], dtype=np.float32)
write_pfm(tmp / "disp.pfm", disp)
dm = read_disparity(tmp / "disp.pfm")
print("valid mask\n", dm.valid)

# 16-bit PGM: samples are big-endian and normalized by maxval
img = rng.random((1, 4, 6))
write_pgm(tmp / "img.pgm", img)
back = read_pgm(tmp / "img.pgm")
print("PGM max quantization error", float(np.abs(back - img).max()))

# checkpoints keep names, shapes and float32 bits
store = ParamStore(seed=3)
store.add("enc.conv1.w", (4, 1, 3, 3))
store.add("enc.conv1.b", (4,), init="zeros")
save_checkpoint(store, tmp / "params.drsk")
loaded = load_checkpoint(tmp / "params.drsk")
print("checkpoint entries", loaded.names(), (tmp / "params.drsk").stat().st_size, "bytes")

write_json(tmp / "report.json", {"epe": 0.5, "bad1": 0.1})
print((tmp / "report.json").read_text())

"""
Command-line pipeline
=====================

The ``drstereo`` entry point wraps data generation, training, inference,
evaluation, bucket statistics, the corruption scenario and the gradient
suite. Here it is driven in-process through ``main``.
"""

import json
import tempfile
from pathlib import Path

from drstereo.cli import main
from drstereo.rectifier import ModelConfig
from drstereo.stereoio import write_json

work = Path(tempfile.mkdtemp())
model = ModelConfig(channels=16, groups=4, max_disp=16, radius=1, hidden=16, total_itr=4)
write_json(work / "train.json", {"steps": 60, "width": 32, "height": 32, "eval_every": 30,
                                 "eval_batch": 2, "model": model.to_dict()})

main(["gen-data", "--seed", "1", "--out", str(work / "data"), "--width", "48", "--height", "32"])
main(["train", "--seed", "3", "--config", str(work / "train.json"), "--out", str(work / "run")])
main(["infer", "--checkpoint", str(work / "run" / "final.drsk"), "--config", str(work / "train.json"),
      "--left", str(work / "data" / "left_0000.pgm"), "--right", str(work / "data" / "right_0000.pgm"),
      "--out", str(work / "pred")])
main(["eval", "--pred", str(work / "pred" / "disparity.pfm"), "--gt", str(work / "data" / "disp_0000.pfm"),
      "--uncertainty", str(work / "pred" / "uncertainty.pfm"), "--trace", str(work / "pred" / "trace.json"),
      "--out", str(work / "report.json")])
main(["stats", "--trace", str(work / "pred" / "trace.json"), "--gt", str(work / "data" / "disp_0000.pfm"),
      "--out", str(work / "stats.json")])
main(["corrupt-sim", "--seed", "1", "--checkpoint", str(work / "run" / "final.drsk"),
      "--config", str(work / "train.json"), "--region", "8", "8", "24", "24", "--value", "15",
      "--width", "48", "--height", "32", "--out", str(work / "corrupt.json")])

print(json.dumps(json.loads((work / "stats.json").read_text()), indent=2))
# usage errors exit with 1, data errors with 2
print("exit codes:", main(["train"]), main(["eval", "--pred", "missing.pfm", "--gt", "missing.pfm",
                                           "--out", str(work / "x.json")]))

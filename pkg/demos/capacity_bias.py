"""Why a small second network is a useful teacher.

Both networks are trained on the labeled 1% only. The primary sees 8 frames
at stride 8 and is wide; the auxiliary sees 8 consecutive frames and is a
quarter as wide. The primary wins on appearance-defined (spatial) classes,
while the auxiliary loses more when its input is thinned out in time,
meaning it actually relies on motion.

Run: python3 demos/capacity_bias.py [seed ...]   (about 20 s per seed)
"""
import sys
from pathlib import Path

import numpy as np

from pseudolab.config import load_config, with_overrides
from pseudolab.synthdata import VAL_STREAM, Kind, generate_dataset, split_labeled
from pseudolab.trainer import train
from pseudolab import metrics as M

BENCHMARK = Path(__file__).resolve().parents[1] / "configs" / "benchmark.cfg"

seeds = [int(s) for s in sys.argv[1:]] or [0]
cfg = with_overrides(load_config(BENCHMARK),
                     ["mode=supervised", "temporal.aux_frames=8", "temporal.aux_stride=8"])
data = generate_dataset(cfg.data)
val = generate_dataset(cfg.data, VAL_STREAM,
                       counts=(cfg.eval.val_videos_per_class,) * cfg.data.num_classes)
spatial = [k for k in range(cfg.data.num_classes) if cfg.data.kind_of(k) is Kind.SPATIAL]
temporal = val.of_kind(Kind.TEMPORAL)
clip = cfg.temporal.primary

for seed in seeds:
    split = split_labeled(data, cfg.split.labeled_fraction, cfg.split.scheme, seed=seed)
    pair, _ = train(cfg, data, split, seed=seed)
    print(f"seed {seed}: {len(split.labeled_idx)} labeled videos")
    for name, net in (("primary", pair.primary), ("auxiliary", pair.auxiliary)):
        table = M.class_accuracy(net, val, cfg.eval.num_clips, clip)
        deg = M.stride_degradation(net, temporal, clip=clip, num_clips=cfg.eval.num_clips)
        print(f"  {name:>9}: spatial acc {table.mean_over(spatial):.3f}  "
              f"temporal acc by stride {dict(zip(deg.strides, np.round(deg.accuracy, 3).tolist()))}  "
              f"drop at 8 = {deg.drop_at(8):.3f}")

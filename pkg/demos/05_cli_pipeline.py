"""The four CLI stages chained in-process: simulate -> train -> predict -> eval.

Equivalent shell session:

    speechq simulate --config run.ini
    speechq train    --config run.ini
    speechq predict  --checkpoint out/run/final.ckpt data/wavs/*.wav
    speechq eval     --checkpoint out/run/final.ckpt --manifest data/manifest_holdout.tsv

Run: python demos/05_cli_pipeline.py
"""

import glob
import os
import tempfile

from speechq.cli import main

CONFIG = """
[model]
bottleneck_channels = 16
conv_channels = 32
blocks_per_repeat = 3
repeats = 1

[quantizer]
n_classes = 20

[training]
lr = 2e-3
batch_size = 8
crop_seconds = 0.5
max_steps = 600
td_mse_reduction = mean
seed = 3

[simulate]
count = 24
holdout_count = 6
duration_seconds = 0.5
seed = 21

[data]
manifest = {data}/manifest.tsv

[output]
dir = {out}
"""

with tempfile.TemporaryDirectory() as work:
    data_dir = os.path.join(work, "data")
    run_dir = os.path.join(work, "run")
    config_path = os.path.join(work, "run.ini")
    with open(config_path, "w") as fh:
        fh.write(CONFIG.format(data=data_dir, out=run_dir))

    print("== simulate ==")
    assert main(["simulate", "--config", config_path, "--out", data_dir]) == 0

    print("== train ==")
    assert main(["train", "--config", config_path, "--out", run_dir]) == 0

    print("== predict (first two degraded files) ==")
    checkpoint = os.path.join(run_dir, "final.ckpt")
    wavs = sorted(glob.glob(os.path.join(data_dir, "wavs", "*degraded.wav")))[:2]
    assert main(["predict", "--checkpoint", checkpoint, *wavs]) == 0

    print("== eval on the held-out split ==")
    holdout = os.path.join(data_dir, "manifest_holdout.tsv")
    assert main(["eval", "--checkpoint", checkpoint, "--manifest", holdout]) == 0

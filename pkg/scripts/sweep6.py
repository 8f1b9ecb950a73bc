"""Scratch sweep for the end-to-end learnability target."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from vvids.data import SyntheticSpec, generate_synthetic
from vvids.model import LossWeights, ModelConfig
from vvids.train import RunConfig, evaluate_model, split_dataset, train

for nm, l1w, iouw, opt, lr, steps in [
    (1, 4.0, 2.0, "adamw", 1e-3, 300),
    (2, 4.0, 2.0, "adamw", 1e-3, 300),
    (2, 4.0, 2.0, "lion", 5e-4, 300),
    (2, 8.0, 4.0, "adamw", 1e-3, 300),
    (2, 4.0, 2.0, "adamw", 1e-3, 600),
    (2, 8.0, 4.0, "lion", 5e-4, 300),
]:
    spec = SyntheticSpec(seed=0, n_videos=200, clips_per_video=20,
                         signal_strength=2.0, d_video=8, d_audio=8, d_text=4,
                         moments_per_video=nm)
    records = generate_synthetic(spec)
    tr, va = split_dataset(records)
    mc = ModelConfig(d_model=32, num_heads=8, memory_slots=16, decoder_layers=1,
                     num_queries=10, pre_dropout_visual_audio=0.0,
                     pre_dropout_text=0.0, dropout=0.0)
    run = RunConfig(model=mc, loss=LossWeights(l1=l1w, iou=iouw), optimizer=opt,
                    lr=lr, weight_decay=1e-4, batch_size=1, epochs=500,
                    seed=0, max_steps=steps)
    t0 = time.time()
    res = train(records, run)
    rep = evaluate_model(va, res.model_config, res.params, threads=1)
    first, last = res.epoch_rows[0]["train_loss"], res.epoch_rows[-1]["train_loss"]
    print(f"nm={nm} l1={l1w} iou={iouw} {opt:5s} lr={lr:g} steps={steps}: "
          f"loss {first:.2f}->{last:.2f} ({last/first:.2f}) "
          f"mAP@.5={rep.metrics['MR-mAP@0.5']:.3f} R1={rep.metrics['MR-R1@0.5']:.2f} "
          f"HD={rep.metrics['HD-mAP']:.3f} ({time.time()-t0:.0f}s)", flush=True)

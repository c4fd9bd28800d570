"""Training the refiner for single-side deployment.

The refiner maps each conventional codeword to a refined one and is trained
on (selected codeword, channel) pairs to maximise their cosine similarity.
Only the BS swaps its codebook; the UE keeps selecting with RVQ, so no
codebook has to be signalled.

The network here is deliberately small so the script finishes in about a
minute; the acceptance suite uses D=64, L=2 and 200 epochs.

Run:  python3 demos/02_single_side_training.py
"""

import logging

from csilab import (ArrayGeometry, CodebookKind, RefinerConfig, ScenarioConfig, TrainingConfig, count_params,
                    enhance_codebook, eval_cosine, generate_dataset, generate_rvq, oracle_ss, train_ss)

logging.basicConfig(level=logging.INFO, format="%(message)s")

scenario = ScenarioConfig(geometry=ArrayGeometry(4, 4), num_clusters=6, seed=11)
ds = generate_dataset(scenario, 4000, 500, 1000)
rvq = generate_rvq(8, scenario.n_c, 5)

rcfg = RefinerConfig(n_t=scenario.geometry.n_t, d_model=32, n_layers=2, n_heads=4, seed=1)
tcfg = TrainingConfig(batch_size=256, epochs=40, learning_rate=2e-3, decay_rate=0.97, seed=2)
print(f"refiner parameters: {count_params(rcfg)}")

params, report = train_ss(ds.train, rvq, rcfg, tcfg,
                          log=lambda msg: logging.info(msg) if msg.startswith("epoch 4") else None)
print(f"training loss {report.epoch_loss[0]:.4f} -> {report.epoch_loss[-1]:.4f} in {report.wall_clock:.1f}s")

enhanced = enhance_codebook(params, rvq, rcfg, CodebookKind.ENHANCED_SS, "demo")
conv = eval_cosine(ds.test, rvq, rvq).mean
orc = eval_cosine(ds.test, rvq, oracle_ss(ds.train, rvq)).mean
enh = eval_cosine(ds.test, rvq, enhanced).mean
print(f"conventional {conv:.4f}  enhanced-ss {enh:.4f}  oracle-ss {orc:.4f}")
print(f"share of the oracle gain recovered: {(enh - conv) / (orc - conv):.0%}")

"""One codebook per environment, chosen by index.

In the multi-scenario framework the BS keeps a set of dual-side codebooks,
one per environment, and tells the UE which one to use.  Picking the right
environment matters: a codebook shaped for another site's clusters gives
back most of the gain.

Run:  python3 demos/04_multi_scenario.py
"""

from csilab import eval_cosine, generate_dataset, generate_rvq, parse_config
from csilab.lab import build_mslcf_set, select_codebook

cfg = parse_config("""
framework: MSLCF
mode: DS
seed: 8
bits: [6]
scenarios:
  - {geometry: {n_h: 4, n_v: 4}, num_clusters: 4, seed: 101}
  - {geometry: {n_h: 4, n_v: 4}, num_clusters: 4, seed: 202}
refiner: {d_model: 16, n_layers: 1, n_heads: 2}
training: {epochs: 40, update_interval: 20, batch_size: 256, learning_rate: 0.003}
""")
datasets = {sc.env_id: generate_dataset(sc, 3000, 400, 800) for sc in cfg.scenarios}
cbs = build_mslcf_set(cfg, datasets, bits=6)
rvq = generate_rvq(6, 32, cfg.rvq_seed)

print("test env | conventional | " + " | ".join(f"codebook env{e}" for e in cbs))
for env, ds in datasets.items():
    row = [eval_cosine(ds.test, rvq, rvq).mean]
    row += [eval_cosine(ds.test, select_codebook(cbs, e), select_codebook(cbs, e)).mean for e in cbs]
    print(f"   env{env}  | " + " | ".join(f"{v:12.4f}" for v in row))

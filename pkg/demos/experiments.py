"""Run a small NMSE sweep through the harness, write CSV plus manifest, replay it.

Run: python3 demos/experiments.py [out_dir]
The same thing from the shell: otfs-sbl nmse --trials 5 --out results
"""

import sys
from pathlib import Path

from otfs_sbl.harness import (default_config, emit_manifest, rerun_from_manifest,
                              run_experiment)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_results")
cfg = default_config("nmse_sweep").replace(trials=5, snr_db=(3.0, 9.0, 15.0),
                                           algorithms=("omp", "ifsbl", "ifsblt"))
res = run_experiment(cfg)
manifest = emit_manifest(cfg, res, out)
print(res.csv_text())
print("guard counters:", res.counters)

csv_path, same = rerun_from_manifest(manifest, out / "replay")
print(f"replayed into {csv_path}: identical = {same}")

"""
Driving the command line interface

Runs every subcommand on a small configuration and lists the files written.
"""

import tempfile
from pathlib import Path

from randtangency.cli import main

CONFIG = """
[run]
resolutions = [32, 64]
n_sequences = 100
horizon = 10000
basin_sequences = 100
ball_sequences = 2000
regular_points = [[0.0652, 1.0048, 0.958]]
"""

with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp) / "small.toml"
    cfg.write_text(CONFIG)
    for cmd in ("validate", "orbit", "returns", "recurrence", "measures", "basin", "geometry", "ball"):
        out = Path(tmp) / cmd
        code = main([cmd, "--config", str(cfg), "--out", str(out), "--seed", "42"])
        print(f"{cmd:<11} exit {code}: {sorted(p.name for p in out.iterdir())}")

#!/usr/bin/env python3
"""
EGFL Lab desk-scale launcher

Runs the whole pipeline on a small grid so the artifacts can be inspected
in a couple of minutes:

1. Generate a K=10, N=3, D=500 synthetic dataset grid
2. Train every variant for a few rounds
3. Emit the table behind every figure
4. Evaluate the convergence-probability bound

Everything lands in ./desk_run (override with the first argument).
"""

import sys
from pathlib import Path

DESK_CONFIG = """\
K = 10
N = 3
D = 500
T = 15
L = 10
R_lambda = 10
"""

if __name__ == "__main__":
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("desk_run")
    print("🚀 Starting EGFL desk run...")
    print("=" * 50)

    from egfl_lab.cli import main
    from egfl_lab.reports import FIGURES

    root.mkdir(parents=True, exist_ok=True)
    config_path = root / "desk.conf"
    config_path.write_text(DESK_CONFIG, encoding="utf-8")
    steps = [
        ["gen-data", "--k", "10", "--n", "3", "--d", "500", "--out", str(root / "data")],
        ["train", "--config", str(config_path), "--data", str(root / "data"), "--out", str(root / "run")],
        *(["report", "--run", str(root / "run"), "--figure", name] for name in sorted(FIGURES)),
        ["bound", "--run", str(root / "run")],
    ]

    try:
        for step in steps:
            print(f"▶ {' '.join(step)}")
            code = main(step)
            if code != 0:
                print(f"\n❌ Step failed with exit code {code}")
                sys.exit(code)
    except KeyboardInterrupt:
        print("\n👋 Desk run interrupted.")
        sys.exit(130)
    print("=" * 50)
    print(f"✅ Artifacts written to {root.resolve()}")

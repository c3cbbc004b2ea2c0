"""Regenerate both bound sweeps and the ex1 margins into out/figures."""

import sys

from iqcrobust.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out/figures"
    sys.exit(main(["fig4", "--out-dir", out]) or main(["fig5", "--out-dir", out]))

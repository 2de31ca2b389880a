#!/usr/bin/env python3
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from factorial_inference.cli import main  # noqa: E402

if __name__ == "__main__":
    script_name = os.path.basename(sys.argv[0])
    if len(sys.argv) < 2:
        print(f"Usage: python {script_name} <design|assign|estimate|simulate|oracle|verify> [options]")
        print(f"       python {script_name} <subcommand> --help")
        sys.exit(2)

    sys.exit(main(sys.argv[1:]))

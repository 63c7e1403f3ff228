#!/usr/bin/env python3
"""
Simple launcher for the carbon dispatch command line
Runs cli/run_cli.py from the repository root with the given arguments
"""

import subprocess
import sys
from pathlib import Path


def main():
    """Launch the CLI"""
    cli_script = Path(__file__).parent / "cli" / "run_cli.py"

    if not cli_script.exists():
        print("❌ CLI script not found. Please ensure the cli folder structure is correct.")
        return 1

    args = sys.argv[1:] or ["run", "--method", "no-cdr"]
    try:
        result = subprocess.run([sys.executable, str(cli_script), *args], cwd=Path(__file__).parent)
        return result.returncode
    except KeyboardInterrupt:
        print("\n👋 Run stopped by user")
        return 130
    except Exception as e:
        print(f"❌ Error launching CLI: {e}")
        return 1


if __name__ == "__main__":
    exit(main())

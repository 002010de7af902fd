#!/usr/bin/env python3
"""
Simple runner script for the architecture search CLI.

    python run.py search --preset desk
    python run.py serve          # start the MCP tool server
"""

import sys

if __name__ == "__main__":
    try:
        if sys.argv[1:2] == ["serve"]:
            from src.server import main as serve

            serve()
            sys.exit(0)
        from src.experiment_cli import main

        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted; resume with: python run.py search --resume <out>/checkpoint.json")
        sys.exit(0)
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)

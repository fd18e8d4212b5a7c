#!/usr/bin/env python3
"""
Entry point for running hqdm as a module with python -m hqdm
"""

if __name__ == "__main__":
    from .cli import main
    main()

"""python -m sfdesim entry point."""

from .cli import main

main()

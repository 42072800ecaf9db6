"""Allow ``python -m miscible <command>``."""

from .cli import main

if __name__ == "__main__":
    main()

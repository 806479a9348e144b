"""Console entry point for ``bisift`` and ``python -m bisift``."""

import sys

from pydantic import ValidationError


def main_sync():
    """Synchronous entry point for CLI script.

    A malformed ``BISIFT_`` setting fails the import of the command line and is
    reported on one line with exit status 1.
    """
    try:
        from .cli import main
    except ValidationError as e:
        print(f"bisift: error: invalid settings: {' '.join(str(e).split())}", file=sys.stderr)
        sys.exit(1)
    sys.exit(main())


if __name__ == "__main__":
    main_sync()

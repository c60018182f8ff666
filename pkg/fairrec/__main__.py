"""Entry-point for the :program:`fairrec` command."""

import sys


def main() -> None:
    """Entrypoint to the ``fairrec`` command."""
    from fairrec.bin.fairrec import main as _main
    sys.exit(_main())


if __name__ == '__main__':  # pragma: no cover
    main()

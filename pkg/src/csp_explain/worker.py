"""Standalone worker for the external-model exchange protocol.

``python -m csp_explain.worker --exchange-dir D (--echo-dir E | --synthetic P.json)``

Kept apart from :mod:`csp_explain.external` so that running it with ``-m``
does not re-import a module the package has already loaded.
"""
from .external import main

if __name__ == "__main__":
    raise SystemExit(main())

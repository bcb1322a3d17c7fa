"""Hot inner-loop kernels with a compiled backend and a NumPy fallback.

The compiled Cython module is used when it was built at install time.
Setting ``JOINTARD_PURE_PYTHON=1`` forces the NumPy implementation.
"""

import os

from . import _admm_py

BACKEND = "python"
admm_double_l1 = _admm_py.admm_double_l1

if os.environ.get("JOINTARD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _admm_cy
    except ImportError:
        pass
    else:
        admm_double_l1 = _admm_cy.admm_double_l1
        BACKEND = "cython"

python_admm_double_l1 = _admm_py.admm_double_l1

__all__ = ["BACKEND", "admm_double_l1", "python_admm_double_l1"]

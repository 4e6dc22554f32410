"""Test-wide setup: pin BLAS to one thread before numpy loads.

The matrices in this package are small; OpenBLAS thread spin-wait makes
tiny GEMMs an order of magnitude slower on few-core boxes and adds timing
noise. Single-threaded BLAS also keeps every test bitwise reproducible.
"""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")

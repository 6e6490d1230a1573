"""Build the optional compiled kernels.

Without Cython or a C compiler the package installs pure-Python and falls back
to ``sparsefit._pykernels`` at import.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPARSEFIT_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "sparsefit._ckernels",
                    ["src/sparsefit/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: keeps the simulator bit-identical to numpy
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

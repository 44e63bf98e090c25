import os

import numpy as np
from setuptools import Extension, setup

# PSEUDOSCENE_NO_EXT=1 installs the pure-Python package only.
ext_modules = []
if not os.environ.get("PSEUDOSCENE_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pseudoscene._kernels",
                ["src/pseudoscene/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # fused multiply-add would break bitwise parity with the numpy fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)

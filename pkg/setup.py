"""Build the optional compiled span kernels.

When Cython or a C compiler is unavailable the package still installs and
runs on the numpy fallback.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("PCFG_IO_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("pcfg_io._kernels", ["src/pcfg_io/_kernels.pyx"],
                       include_dirs=[numpy.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)

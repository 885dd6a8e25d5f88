"""Build hook for the optional Cython kernels.

Everything else lives in pyproject.toml.  If Cython or a compiler is missing
the package still installs and falls back to ``zazou._kernels_py``.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "zazou._kernels",
                ["src/zazou/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)

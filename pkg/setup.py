import os

from setuptools import setup

# pyproject.toml carries the metadata; this file only wires up the optional
# Cython core.  Without Cython (or with TRUSTFIELD_NO_EXT=1) the package
# installs as pure Python and falls back to trustfield._pykernels.
ext_modules = []
if not os.environ.get("TRUSTFIELD_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "trustfield._kernels",
                    ["src/trustfield/_kernels.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

"""Build script for the optional compiled kernel core.

The package works without the extension (a NumPy fallback is selected at
import time); set LIDARBLOOM_NO_EXT=1 to skip compilation entirely.
-ffp-contract=off keeps the C accumulation bit-identical to the Python
oracle (no FMA contraction).
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible; fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing / broken toolchain
            print(f"warning: building lidarbloom._fastpath failed ({exc}); "
                  "installing with the pure-NumPy backend only")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: {ext.name} failed to compile ({exc}); "
                  "the pure-NumPy backend will be used")


ext_modules = []
cmdclass = {}
if not os.environ.get("LIDARBLOOM_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "lidarbloom._fastpath",
                    ["src/lidarbloom/_fastpath.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
        cmdclass = {"build_ext": optional_build_ext}
    except ImportError as exc:
        print(f"warning: Cython/NumPy unavailable ({exc}); "
              "building without the compiled core")

setup(ext_modules=ext_modules, cmdclass=cmdclass)

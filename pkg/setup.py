# Builds the optional Cython GRU kernel. The package works without it
# (pure-numpy fallback); set PYRFIX_NO_EXT=1 to skip the extension build.
import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to the pure-Python fallback if the toolchain is missing."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: skipping compiled kernels ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: failed to build {ext.name} ({exc}); "
                  "falling back to pure-Python kernels")


ext_modules = []
cmdclass = {}
if not os.environ.get("PYRFIX_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext = Extension(
            "pyrfix.nn._gru_speedups",
            sources=["src/pyrfix/nn/_gru_speedups.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
        cmdclass["build_ext"] = optional_build_ext
    except ImportError as exc:
        print(f"WARNING: Cython/numpy unavailable ({exc}); "
              "building without compiled kernels")

setup(ext_modules=ext_modules, cmdclass=cmdclass)

"""Build script: compiles the window-kernel extension when Cython is usable.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here degrades to a pure-Python install instead
of aborting.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("tsrm.kernels._window_ops", ["src/tsrm/kernels/_window_ops.pyx"])],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # noqa: BLE001 - degrade to the numpy backend
    print(f"skipping compiled kernels ({exc}); numpy fallback will be used")

setup(ext_modules=ext_modules)

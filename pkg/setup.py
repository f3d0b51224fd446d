import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BEACONSCHED_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("beaconsched._tick_cy", ["src/beaconsched/_tick_cy.pyx"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython available: install with the pure-Python kernel only.
        ext_modules = []

setup(ext_modules=ext_modules)

"""Builds the optional compiled kernels; the package works without them."""

import logging

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

log = logging.getLogger(__name__)

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing etc.
            log.warning("compiled kernels not built (%s); using the Python fallback", exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            log.warning("could not build %s (%s); using the Python fallback", ext.name, exc)


extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "cogos.vectors._ckernels",
                ["src/cogos/vectors/_ckernels.pyx"],
                # strict IEEE evaluation order keeps results identical to the fallback
                extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})

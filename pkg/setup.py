import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    """Build the compiled kernels if possible, fall back to pure Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            "warning: compiled kernel build failed (%s); "
            "falling back to the pure Python backend" % exc,
            file=sys.stderr,
        )


def _compile_args():
    """Pick optimization flags, preferring the host's vector units."""
    args = ["-O3"]
    if sys.platform != "win32":
        # -march=native lets the compiler emit FMA/AVX for the fixed-width
        # accumulator loops; the build falls back cleanly if unsupported.
        args.append("-march=native")
    return args


extensions = [
    Extension(
        "voxplan._kernels",
        ["src/voxplan/_kernels.pyx"],
        extra_compile_args=_compile_args(),
    )
]

setup(
    ext_modules=cythonize(extensions, language_level="3") if cythonize else [],
    cmdclass={"build_ext": OptionalBuildExt},
)

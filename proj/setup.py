"""CMake-driven build for the bevcal extension.

The build mirror used in this environment does not serve scikit-build-core,
so this shim configures the project's CMake tree, builds only the pybind11
target, and drops the resulting module next to the pure-Python package.
"""

import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name: str) -> None:
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext: CMakeExtension) -> None:
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)
        # The module lands in <ext_dir>/bevcal/_core*.so alongside __init__.py.
        ext_dir = Path(self.get_ext_fullpath(ext.name)).resolve().parent.parent
        configure = [
            "cmake",
            str(source_dir),
            "-DCMAKE_BUILD_TYPE=Release",
            f"-DPython_EXECUTABLE={sys.executable}",
        ]
        subprocess.run(configure, cwd=build_dir, check=True)
        subprocess.run(
            ["cmake", "--build", ".", "--target", "_core", "--parallel"],
            cwd=build_dir,
            check=True,
        )
        built = build_dir / "python" / "bevcal"
        dest = ext_dir / "bevcal"
        dest.mkdir(parents=True, exist_ok=True)
        for so in built.glob("_core*.so"):
            self.copy_file(str(so), str(dest / so.name))


setup(
    ext_modules=[CMakeExtension("bevcal._core")],
    cmdclass={"build_ext": CMakeBuild},
)

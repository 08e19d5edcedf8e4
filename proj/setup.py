import pathlib
import subprocess

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        src = pathlib.Path(__file__).parent.resolve()
        build = pathlib.Path(self.build_temp).resolve()
        build.mkdir(parents=True, exist_ok=True)
        # Drop the module next to the package sources so both regular and
        # editable installs can import it.
        out = src / "python" / "panoctx"
        subprocess.check_call(
            [
                "cmake",
                str(src),
                f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={out}",
                "-DCMAKE_BUILD_TYPE=Release",
            ],
            cwd=build,
        )
        subprocess.check_call(
            ["cmake", "--build", str(build), "--target", "_panoctx", "-j"], cwd=build
        )
        dest = pathlib.Path(self.get_ext_fullpath(ext.name)).resolve()
        dest.parent.mkdir(parents=True, exist_ok=True)
        built = sorted(out.glob("_panoctx*.so"))
        if built:
            dest.write_bytes(built[0].read_bytes())


setup(
    ext_modules=[CMakeExtension("panoctx._panoctx")],
    cmdclass={"build_ext": CMakeBuild},
    package_data={"panoctx": ["_panoctx*.so"]},
)

"""Smoke test for the reachctl_py extension module.

Builds the cdylib with cargo (unless REACHCTL_PY_LIB points at a built
library), loads it, and exercises each exported function once.
"""

import importlib.util
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
DATA = ROOT / "data" / "sidetoside"


def built_library():
    env = os.environ.get("REACHCTL_PY_LIB")
    if env:
        return pathlib.Path(env)
    subprocess.run(["cargo", "build", "--release", "-p", "reachctl-py"], cwd=ROOT, check=True)
    for name in ("libreachctl_py.so", "libreachctl_py.dylib", "reachctl_py.dll"):
        path = ROOT / "target" / "release" / name
        if path.exists():
            return path
    sys.exit("reachctl_py library not found under target/release")


def load(lib):
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    dest = pathlib.Path(tempfile.mkdtemp()) / ("reachctl_py" + suffix)
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("reachctl_py", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    rp = load(built_library())

    tri = rp.case_study_triangulation()
    assert "[[vertices]]" in tri and "[[simplices]]" in tri

    bundle = rp.synthesize_case_study()
    checks = rp.verify(bundle)
    assert checks and all(passed for *_, passed in checks), checks
    print(f"verify: {len(checks)} checks, all pass")

    scenario = (DATA / "nominal.cfg").read_text()
    run = rp.simulate(bundle, scenario)
    assert not run["lost"] and run["t1_ok"]
    assert run["unsafe_samples"] == 0
    assert len(run["crossings"]) >= 3
    assert len(run["t"]) == len(run["x"]) == len(run["xdot"]) == len(run["u"])
    print(f"simulate: {len(run['t'])} samples, crossings {run['crossings']}")

    k, g = rp.affine_feedback([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[1.0], [3.0], [-2.0]])
    assert abs(k[0][0] - 2.0) < 1e-12 and abs(k[0][1] + 3.0) < 1e-12 and abs(g[0] - 1.0) < 1e-12

    assert rp.pitch_command(0.0) == 0.0
    assert rp.pitch_command(1.0) > 0.0

    try:
        rp.verify("not = [valid")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed bundle accepted")

    print("smoke test OK")


if __name__ == "__main__":
    main()

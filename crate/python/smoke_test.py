"""Builds the extension module with cargo and exercises it from Python.

Usage: python3 python/smoke_test.py
"""

import importlib.util
import math
import pathlib
import shutil
import subprocess
import sys
import sysconfig
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def build():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "overflowlab-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    release = ROOT / "target" / "release"
    for name in ("liboverflowlab_py.so", "liboverflowlab_py.dylib", "overflowlab_py.dll"):
        if (release / name).exists():
            return release / name
    sys.exit("extension library not found under target/release")


def load(lib):
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    dest = pathlib.Path(tempfile.mkdtemp()) / f"overflowlab{suffix}"
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("overflowlab", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    ol = load(build())

    mm1 = ol.Network([0.3], [0.7], [[0.0]], name="mm1")
    assert abs(mm1.rho[0] - 3 / 7) < 1e-12
    assert mm1.beta == 1
    assert abs(mm1.overflow_probability(2) - 0.09) < 1e-12
    for n in (5, 10, 20):
        closed = 0.4 / ((7 / 3) ** n - 1)
        assert abs(mm1.overflow_probability(n) - closed) < 1e-9

    tandem = ol.Network.from_file(str(ROOT / "crates" / "core" / "networks" / "tandem_sym.json"))
    rho_v, beta_v, gamma_v = tandem.target_params([1, 1])
    assert beta_v == 2 and abs(gamma_v - math.log(4.5)) < 1e-12

    exact = tandem.overflow_probability(10)
    est = tandem.split(10, 20000, 42)
    assert abs(est["mean"] - exact) <= 4 * est["std_error"], (est, exact)
    assert est["levels"] == 22

    lhs, rhs = tandem.regeneration_check(5, [1, 1])
    assert abs(lhs - rhs) < 1e-8
    assert abs(tandem.subsolution_residual([2, 3])) < 1e-12
    assert abs(sum(p for _, p in tandem.reversed_kernel_row([1, 0])) - 1) < 1e-12

    mc = mm1.naive_mc(3, 20000, 7)
    assert abs(mc["mean"] - 0.4 / ((7 / 3) ** 3 - 1)) <= 4 * mc["std_error"]

    csv = tandem.scaling_csv([4, 6, 8, 10], 500, 1)
    assert csv.startswith("n,estimate,exact,cv2,mean_Nn,mean_work")

    slope, _, r2 = ol.fit_exponent([(1.0, 2.0), (2.0, 8.0), (4.0, 32.0)])
    assert abs(slope - 2) < 1e-12 and abs(r2 - 1) < 1e-12
    assert ol.replication_plan(1.0, 0.1, 0.05) == 2000

    try:
        ol.Network([0.6], [0.4], [[0.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("unstable network accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()

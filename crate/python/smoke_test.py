"""Smoke test for the regret_ldp extension module.

Imports an installed `regret_ldp` if there is one; otherwise builds the
extension with cargo and loads it from a temporary directory.
"""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import regret_ldp
        return regret_ldp
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "regret-ldp-python"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libregret_ldp_py.so"
    tmp = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(built, tmp / "regret_ldp.so")
    sys.path.insert(0, str(tmp))
    import regret_ldp
    return regret_ldp


def main():
    m = load()

    pi = m.invariant_measure([[0.9, 0.1], [0.5, 0.5]])
    assert abs(pi[0] - 5.0 / 6.0) < 1e-10, pi
    assert m.relative_entropy([0.5, 0.5], [0.5, 0.5]) == 0.0

    model = m.Model.scalar(0.1, 0.5)
    assert model.dim == 1
    assert model.hamiltonian([0.5], [0.0]) == 0.0
    drift = model.mean_drift([0.5])[0]
    rate, alpha = model.local_rate([0.5], [drift])
    assert rate < 1e-10 and alpha is not None
    rate, _ = model.local_rate([0.5], [drift + 0.1])
    primal = model.local_rate_primal([0.5], [drift + 0.1])
    assert rate > 0.0 and abs(rate - primal) < 1e-4, (rate, primal)

    try:
        model.local_rate([0.5], [5.0])
    except ValueError:
        pass
    else:
        rate, alpha = model.local_rate([0.5], [5.0])
        assert math.isinf(rate) and alpha is None

    path = model.simulate(1.0, 7)
    assert len(path) == 11

    try:
        m.Model.scalar(1.5, 0.5)
    except ValueError as e:
        assert "epsilon" in str(e)
    else:
        raise AssertionError("epsilon outside (0,1) was accepted")

    print("regret_ldp smoke test passed")


if __name__ == "__main__":
    main()

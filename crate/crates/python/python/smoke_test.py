"""Smoke test for the Python extension.

Builds the cdylib with cargo if no installed ``spherenet`` module is found,
copies it next to this file as ``spherenet.so`` and exercises each binding.
Run with ``python crates/python/python/smoke_test.py``.
"""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parents[2]

BLOBS = """
seed = 3
iterations = 20
batch_size = 8
loss = { kind = "w-softmax", g = { kind = "cosine" } }
network = { kind = "preset", name = "mini", op = { kind = "cosine" } }
dataset = { kind = "blobs", classes = 3, per_class = 10, shape = [1, 8, 8], separation = 5.0 }

[schedule]
base_lr = 1e-2
"""


def load():
    try:
        import spherenet  # noqa: F401
        return spherenet
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "spherenet-py"], cwd=ROOT, check=True
    )
    lib = ROOT / "target" / "release" / "libspherenet.so"
    shutil.copy(lib, HERE / "spherenet.so")
    sys.path.insert(0, str(HERE))
    import spherenet
    return spherenet


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    sn = load()

    assert close(sn.angle([1.0, 0.0], [0.0, 2.0]), math.pi / 2)
    assert close(sn.g("cosine", math.pi / 3), 0.5)
    assert close(sn.g("linear", 0.0), 1.0)
    assert close(sn.g("sigmoid", math.pi / 2, k=0.3), 0.0)
    assert close(sn.psi("cosine", math.pi / 8, 4), 0.0)
    for bad in (lambda: sn.g("tanh", 0.1), lambda: sn.g("sigmoid", 0.1)):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")

    res = sn.conditioning(n=4, m=4, k=2, c_list=[1.0, 2.0, 4.0], seeds=[0, 1])
    assert res["slope"] is not None and res["slope"] > 0
    assert len(res["rows"]) == 6
    assert all(r["trace_identity_err"] < 1e-8 for r in res["rows"])

    cells = sn.gradcheck(
        'ops = ["cosine"]\nlosses = ["w-softmax-cosine"]\nbaseline = false\n'
    )
    assert cells and all(c["pass"] for c in cells), cells

    with tempfile.TemporaryDirectory() as d:
        runs = sn.train(BLOBS, d, deterministic=True)
        assert len(runs) == 1
        assert (pathlib.Path(d) / "metrics.csv").exists()
        assert math.isfinite(runs[0]["final_train_loss"])
        try:
            sn.train("learning_rate = 1.0\n" + BLOBS, d)
        except ValueError as e:
            assert "learning_rate" in str(e)
        else:
            raise AssertionError("unknown key accepted")

    assert "lemma-sweep" in sn.PRESETS and "gradcheck-matrix" in sn.PRESETS
    print("python smoke test: ok")


if __name__ == "__main__":
    main()

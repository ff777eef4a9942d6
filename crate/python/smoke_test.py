"""Smoke test for the hfbrt Python module.

Build and install first:
    pip install --no-build-isolation -e crates/py
"""

import tempfile
from fractions import Fraction
from pathlib import Path

import hfbrt


def main():
    sc = hfbrt.Scenario.toy()
    assert sc.token_width == 32 and sc.observation_width == 16, sc
    assert abs(hfbrt.Scenario.baseline().rayleigh_distance - 20.0) < 1e-12

    pmf = dict(hfbrt.near_field_pmf(hfbrt.Scenario.baseline()))
    assert Fraction(list(pmf)[4]) == Fraction(16, 81), pmf
    assert sum(Fraction(k) for k in pmf) == 1

    gen = hfbrt.Generator(sc)
    batch = gen.batch(64, seed=1, snr_db=10.0)
    assert len(batch.h0) == 64 and len(batch.h0[0]) == sc.token_width
    assert len(batch.y[0]) == sc.observation_width

    model = hfbrt.Model.toy(sc, seed=0)
    model.set_betas(0.0)
    assert model.estimate(batch.h0, 64) == batch.h0

    model = hfbrt.Model.toy(sc, seed=0)
    log = model.train(epochs=30, seed=0)
    epoch, _, val_db, ls_db, _ = log[-1]
    print(f"epoch {epoch}: BRT {val_db:.2f} dB, linear init {ls_db:.2f} dB")
    assert val_db < ls_db

    trace = model.refine(batch.h0, 64)
    assert len(trace) == model.iters + 1

    def mean_nmse(est):
        return sum(hfbrt.nmse(t, e) for t, e in zip(batch.truth, est)) / len(est)

    assert mean_nmse(trace[-1]) < mean_nmse(trace[0])

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "toy.ckpt"
        model.save(str(path))
        again = hfbrt.Model.load(str(path))
        assert again.estimate(batch.h0, 64) == model.estimate(batch.h0, 64)
        assert again.num_params == model.num_params

    try:
        hfbrt.Model.load("/nonexistent/model.ckpt")
    except OSError:
        pass
    else:
        raise AssertionError("loading a missing checkpoint should fail")

    print("ok", hfbrt.__version__)


if __name__ == "__main__":
    main()

"""Smoke test for the smgp_py extension. Run after `maturin develop` or `pip install`."""

import math

import smgp_py as smgp


def main():
    k = smgp.Kernel({"type": "matern32", "variance": 2.0, "lengthscale": 1.5})
    assert abs(k(0.0) - 2.0) < 1e-12
    assert k.state_dim == 2

    data = smgp.generate("conjugate-matern", 200, 0)
    lik = smgp.Likelihood({"type": "gaussian", "variance": 0.1})
    gp = smgp.SparseMarkovGP(k, lik, data["x"], data["y"])
    gp.infer(max_sweeps=5)
    elbo = gp.objective("elbo")
    energy = gp.objective("pep_energy")
    assert abs(elbo - energy) < 1e-6 * abs(elbo), (elbo, energy)

    mean, var = gp.predict([10.0, 20.0])
    assert len(mean) == 2 and all(v > 0 for v in var)

    trace = gp.fit(iterations=60, learning_rate=0.05)
    assert trace[-1] >= trace[0] - 1e-6
    print("conjugate fit:", {k: round(v, 3) for k, v in gp.params.items()})

    data = smgp.generate("binary-sign", 400, 1)
    clf = smgp.SparseMarkovGP(
        smgp.Kernel({"type": "matern52", "variance": 4.0, "lengthscale": 0.3}),
        smgp.Likelihood({"type": "bernoulli_logit"}),
        data["x"],
        data["y"],
        m=40,
        algorithm={"name": "pep", "alpha": 0.5},
    )
    clf.infer(max_sweeps=200, tol=1e-6)
    scores = clf.score(data["x"], data["y"])
    assert scores["error_rate"] < 0.1, scores
    assert clf.site_storage == 39 * (2 * 3 + 4 * 9 + 1)
    print("classifier in-sample:", scores)

    try:
        smgp.Likelihood({"type": "gaussian", "variance": -1.0})
    except ValueError as e:
        assert "parameter_domain" in str(e)
    else:
        raise AssertionError("negative variance accepted")
    assert not math.isnan(clf.objective())
    print("smoke test passed")


if __name__ == "__main__":
    main()

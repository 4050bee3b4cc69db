"""Smoke test for the rmps_lab extension module.

Build and install first:
    maturin develop --release -m crates/python/Cargo.toml
"""

import json
import math

import numpy as np

import rmps_lab


def close(a, b, tol=1e-10):
    assert abs(a - b) <= tol * max(1.0, abs(b)), (a, b)


def main():
    eta, eta_prime = rmps_lab.eta(2, 2)
    close(eta, 0.4)
    close(eta_prime, 0.4)
    close(rmps_lab.alpha(2, 3), math.log(1.25))

    for n in range(1, 5):
        exact = rmps_lab.norm_second_moment(2, n, 2)
        close(exact, 1.0 + 0.4**n)
        close(rmps_lab.oracle_norm_second_moment(2, n, 2), exact)

    value, bound = rmps_lab.connected_purity(2, 4, 2, 1)
    close(value, 0.7136)
    assert value <= bound

    value, bound = rmps_lab.disconnected_purity(2, 8, 4, 4)
    assert value <= bound <= 0.600130 + 1e-9

    zero, _ = rmps_lab.local_obs_second_moment(2, 4, 4, re=[[0.0, 0.0], [0.0, 0.0]])
    close(zero, 0.0)
    z, z_bound = rmps_lab.local_obs_second_moment(2, 4, 4)
    assert 0.0 < z <= z_bound

    f2, haar = rmps_lab.frame_potential(2, 4, 2)
    assert f2 >= haar
    assert abs(rmps_lab.design_distance_sq(2, 4, 2) - 3.6917e-4) < 1e-8

    # Purity of one site computed here in numpy from the dense state.
    psi = np.array(rmps_lab.sample_state(2, 4, 2, seed=3, index=1))
    assert psi.shape == (16,)
    m = psi.reshape(2, 8)
    rho = m @ m.conj().T
    assert np.allclose(rho, rho.conj().T)
    assert np.all(np.linalg.eigvalsh(rho) > -1e-12)
    again = np.array(rmps_lab.sample_state(2, 4, 2, seed=3, index=1))
    assert np.array_equal(psi, again)

    report = json.loads(rmps_lab.run_experiment("max-entropy", 2, 4, 2, 20000, 7, l=1))
    raw = next(r for r in report["records"] if r["name"] == "purity_raw")
    close(raw["exact"], 0.7136)
    assert abs(raw["mean"] - raw["exact"]) <= 3 * raw["stderr"] + 1e-10

    for bad in (lambda: rmps_lab.norm_second_moment(2, 4, 0), lambda: rmps_lab.run_experiment("nope", 2, 4, 2, 10, 0)):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()

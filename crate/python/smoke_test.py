"""Smoke test for the drlqg Python module.

Build and install first, for example:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/drlqg-*.whl
"""

import math

import drlqg


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def ones():
    one = [[1.0]]
    system = drlqg.System(a=[one], b=[one], c=[one], q=[one, one], r=[one])
    cov = drlqg.Covariances(x0=one, w=[one], v=[one])
    return system, cov


def test_scalar_values():
    system, cov = ones()
    assert close(drlqg.lqg_value(system, cov), 2.75, 1e-12)
    p, k = system.riccati()
    assert close(p[0][0][0], 1.5, 1e-12) and close(k[0][0][0], -0.5, 1e-12)
    g = drlqg.grad_f(system, cov)
    assert close(g["w"][0][0][0], 1.0, 1e-12)
    assert close(g["x0"][0][0], 1.625, 1e-12)
    fd = drlqg.fd_grad(system, cov)
    assert close(fd["x0"][0][0], 1.625, 1e-6)


def test_oracle_and_distance():
    lmax, gap = drlqg.oracle_maximize([[2.0]], 0.3, [[1.0]], [[2.0]])
    assert close(lmax[0][0], (math.sqrt(2.0) + 0.3) ** 2, 1e-8)
    assert gap > 0
    assert close(drlqg.gelbrich_distance([[4.0]], [[1.0]]), 1.0, 1e-12)


def test_robust_solve():
    system, cov = ones()
    problem = drlqg.Problem(system, cov, 0.1)
    sol = problem.solve()
    assert sol.converged, sol
    assert sol.f_value > 2.75
    assert problem.infeasible_blocks(sol.worst_case) == []
    passed, f_star, nature_max, controller_min, violations = sol.saddle_check(50, 1)
    assert passed, violations
    k, l = sol.gains
    mean, se = drlqg.monte_carlo_cost(system, k, l, sol.worst_case, 20000, 3)
    assert abs(mean - f_star) <= 4 * se, (mean, se, f_star)


def test_generated_instance_round_trip():
    problem = drlqg.Problem.generate(3, 2, 2, 4, seed=7, rho=0.1)
    again = drlqg.Problem.from_json(problem.to_json())
    assert again.to_json() == problem.to_json()
    sol = problem.solve(tol=1e-3)
    assert sol.converged
    assert len(sol.trace) >= 1 and sol.trace[-1][2] <= 1e-3


def test_numpy_inputs():
    try:
        import numpy as np
    except ImportError:
        return
    system, cov = ones()
    cov_np = drlqg.Covariances(x0=np.eye(1), w=[np.eye(1)], v=[np.eye(1)])
    assert close(drlqg.lqg_value(system, cov_np), 2.75, 1e-12)


def test_errors():
    system, cov = ones()
    bad = drlqg.Covariances(x0=[[1.0]], w=[[[1.0]]], v=[[[0.0]]])
    try:
        drlqg.lqg_value(system, bad)
    except ValueError as e:
        assert "V" in str(e)
    else:
        raise AssertionError("singular V accepted")


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok  {t.__name__}")
    print(f"{len(tests)} smoke tests passed")

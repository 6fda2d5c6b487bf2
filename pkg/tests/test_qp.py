"""Tests for the dense QP solver.

Independent oracles:

* equality-only problems against the closed-form KKT system solve,
* box problems with diagonal Hessian against coordinate-wise clamping,
* small general problems against brute-force active-set enumeration
  (every subset of inequalities treated as equalities, multiplier signs
  checked, best feasible candidate wins),
* scipy's SLSQP on a handful of dense instances.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from pempc.errors import InvalidInputError
from pempc.qp import (
    PreparedQp,
    QpInstance,
    QpStatus,
    kkt_residuals,
    prepare_qp,
    solve_qp,
)


def random_psd(rng, n, shift=1.0):
    m = rng.normal(size=(n, n))
    return m @ m.T + shift * np.eye(n)


def kkt_oracle(p):
    """Closed-form solution of an equality-constrained QP."""
    n, me = p.n, p.num_eq
    kkt = np.block([[p.P, p.A.T], [p.A, np.zeros((me, me))]])
    rhs = np.concatenate([-p.q, p.b])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n], sol[n:]


def enumeration_oracle(p, tol=1e-9):
    """Optimal point by trying every active set of the inequalities."""
    best_cost, best_z = np.inf, None
    mi = p.num_ineq
    for r in range(mi + 1):
        for subset in itertools.combinations(range(mi), r):
            a_rows = [p.A] if p.num_eq else []
            b_parts = [p.b] if p.num_eq else []
            if subset:
                a_rows.append(p.G[list(subset)])
                b_parts.append(p.h[list(subset)])
            if a_rows:
                a_full = np.vstack(a_rows)
                b_full = np.concatenate(b_parts)
            else:
                a_full = np.zeros((0, p.n))
                b_full = np.zeros(0)
            kkt = np.block(
                [[p.P, a_full.T], [a_full, np.zeros((a_full.shape[0],) * 2)]]
            )
            rhs = np.concatenate([-p.q, b_full])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z = sol[: p.n]
            mult = sol[p.n + p.num_eq :]
            if np.any(mult < -tol):
                continue  # wrong sign: this active set is not optimal
            if np.any(p.G @ z - p.h > tol):
                continue  # infeasible candidate
            cost = 0.5 * z @ p.P @ z + p.q @ z
            if cost < best_cost - 1e-12:
                best_cost, best_z = cost, z
    return best_cost, best_z


class TestValidation:
    def test_asymmetric_p_rejected(self):
        with pytest.raises(InvalidInputError):
            QpInstance(P=[[1.0, 2.0], [0.0, 1.0]], q=[0.0, 0.0])

    def test_mismatched_pair_rejected(self):
        with pytest.raises(InvalidInputError):
            QpInstance(P=np.eye(2), q=np.zeros(2), A=np.eye(2), b=None)
        with pytest.raises(InvalidInputError):
            QpInstance(P=np.eye(2), q=np.zeros(2), G=None, h=np.zeros(2))

    def test_wrong_widths_rejected(self):
        with pytest.raises(InvalidInputError):
            QpInstance(P=np.eye(2), q=np.zeros(2), A=np.ones((1, 3)), b=[0.0])
        with pytest.raises(InvalidInputError):
            QpInstance(P=np.eye(2), q=np.zeros(3))

    def test_indefinite_reduced_hessian_rejected(self):
        p = QpInstance(P=[[0.0]], q=[1.0], G=[[1.0]], h=[1.0])
        with pytest.raises(InvalidInputError):
            solve_qp(p)

    def test_empty_constraints_normalized(self):
        p = QpInstance(P=np.eye(2), q=np.zeros(2))
        assert p.A.shape == (0, 2)
        assert p.G.shape == (0, 2)


class TestWorkedExamples:
    def test_projection_onto_hyperplane(self):
        p = QpInstance(P=np.eye(2), q=np.zeros(2), A=[[1.0, 0.0]], b=[1.0])
        sol = solve_qp(p)
        assert sol.status is QpStatus.OPTIMAL
        assert np.allclose(sol.z, [1.0, 0.0], atol=1e-10)
        assert sol.cost == pytest.approx(0.5, abs=1e-10)

    def test_clamped_scalar(self):
        # min 0.5*(z-2)^2 subject to z <= 1: optimum clamps to 1 with
        # multiplier 1; the original expression value there is 0.5.
        p = QpInstance(P=[[1.0]], q=[-2.0], G=[[1.0]], h=[1.0])
        sol = solve_qp(p)
        assert sol.status is QpStatus.OPTIMAL
        assert sol.z[0] == pytest.approx(1.0, abs=1e-10)
        assert sol.ineq_multipliers[0] == pytest.approx(1.0, abs=1e-10)
        assert 0.5 * (sol.z[0] - 2.0) ** 2 == pytest.approx(0.5, abs=1e-10)

    def test_contradictory_inequalities(self):
        p = QpInstance(P=[[1.0]], q=[0.0], G=[[1.0], [-1.0]], h=[-1.0, -1.0])
        sol = solve_qp(p)
        assert sol.status is QpStatus.INFEASIBLE

    def test_inconsistent_equalities(self):
        p = QpInstance(
            P=np.eye(2),
            q=np.zeros(2),
            A=[[1.0, 0.0], [1.0, 0.0]],
            b=[0.0, 1.0],
        )
        sol = solve_qp(p)
        assert sol.status is QpStatus.INFEASIBLE

    def test_unconstrained(self):
        p = QpInstance(P=np.diag([2.0, 4.0]), q=[-2.0, -8.0])
        sol = solve_qp(p)
        assert np.allclose(sol.z, [1.0, 2.0], atol=1e-12)


class TestKktResiduals:
    def test_unconstrained_minimum(self):
        rng = np.random.default_rng(0)
        p_mat = random_psd(rng, 4)
        q = rng.normal(size=4)
        p = QpInstance(P=p_mat, q=q)
        sol = solve_qp(p)
        primal, dual, comp = kkt_residuals(p, sol)
        assert primal <= 1e-12
        assert dual <= 1e-12
        assert comp <= 1e-12

    def test_trivial_origin(self):
        p = QpInstance(P=np.eye(3), q=np.zeros(3))
        sol = solve_qp(p)
        assert np.allclose(sol.z, 0.0)
        assert max(kkt_residuals(p, sol)) == 0.0

    def test_equality_only_against_kkt_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(2, 7))
            me = int(rng.integers(1, n))
            p = QpInstance(
                P=random_psd(rng, n),
                q=rng.normal(size=n),
                A=rng.normal(size=(me, n)),
                b=rng.normal(size=me),
            )
            sol = solve_qp(p)
            z_star, y_star = kkt_oracle(p)
            assert sol.status is QpStatus.OPTIMAL
            assert np.allclose(sol.z, z_star, atol=1e-10)
            assert np.allclose(sol.eq_multipliers, y_star, atol=1e-8)
            assert max(kkt_residuals(p, sol)) <= 1e-10


class TestAgainstOracles:
    def test_box_clamp_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            n = int(rng.integers(1, 8))
            diag = rng.uniform(0.5, 4.0, size=n)
            q = rng.normal(size=n) * 3.0
            lower = rng.uniform(-2.0, 0.0, size=n)
            upper = lower + rng.uniform(0.1, 3.0, size=n)
            p = QpInstance(
                P=np.diag(diag),
                q=q,
                G=np.vstack([np.eye(n), -np.eye(n)]),
                h=np.concatenate([upper, -lower]),
            )
            sol = solve_qp(p)
            expected = np.clip(-q / diag, lower, upper)
            assert sol.status is QpStatus.OPTIMAL
            assert np.allclose(sol.z, expected, atol=1e-9)

    def test_enumeration_oracle(self):
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(40):
            n = int(rng.integers(1, 4))
            mi = int(rng.integers(1, 5))
            p = QpInstance(
                P=random_psd(rng, n),
                q=rng.normal(size=n) * 2.0,
                G=rng.normal(size=(mi, n)),
                h=rng.normal(size=mi) + 0.5,
            )
            best_cost, best_z = enumeration_oracle(p)
            sol = solve_qp(p)
            if best_z is None:
                assert sol.status is not QpStatus.OPTIMAL
                continue
            assert sol.status is QpStatus.OPTIMAL
            assert sol.cost == pytest.approx(best_cost, abs=1e-7)
            assert np.allclose(sol.z, best_z, atol=1e-6)
            checked += 1
        assert checked >= 20  # the draw must exercise plenty of solvable cases

    def test_against_slsqp(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = int(rng.integers(2, 5))
            p_mat = random_psd(rng, n)
            q = rng.normal(size=n)
            lower = np.full(n, -1.0)
            upper = np.full(n, 1.5)
            p = QpInstance(
                P=p_mat,
                q=q,
                G=np.vstack([np.eye(n), -np.eye(n)]),
                h=np.concatenate([upper, -lower]),
            )
            sol = solve_qp(p)
            ref = optimize.minimize(
                lambda z: 0.5 * z @ p_mat @ z + q @ z,
                np.zeros(n),
                jac=lambda z: p_mat @ z + q,
                bounds=[(-1.0, 1.5)] * n,
                method="L-BFGS-B",
                tol=1e-12,
            )
            assert sol.status is QpStatus.OPTIMAL
            assert sol.cost <= ref.fun + 1e-8
            assert np.allclose(sol.z, ref.x, atol=1e-5)

    @given(seed=st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=40, deadline=None)
    def test_optimal_certificates(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        me = int(rng.integers(0, max(1, n)))
        mi = int(rng.integers(0, 6))
        p = QpInstance(
            P=random_psd(rng, n),
            q=rng.normal(size=n),
            A=rng.normal(size=(me, n)) if me else None,
            b=rng.normal(size=me) if me else None,
            G=rng.normal(size=(mi, n)) if mi else None,
            h=rng.normal(size=mi) + 1.0 if mi else None,
        )
        sol = solve_qp(p)
        if sol.status is QpStatus.OPTIMAL:
            primal, dual, comp = kkt_residuals(p, sol)
            assert primal <= 1e-7
            assert dual <= 1e-7
            assert comp <= 1e-7
            assert np.all(sol.ineq_multipliers >= -1e-9)


class TestDeterminism:
    def test_bitwise_repeatability(self):
        rng = np.random.default_rng(5)
        n = 6
        p = QpInstance(
            P=random_psd(rng, n),
            q=rng.normal(size=n),
            A=rng.normal(size=(2, n)),
            b=rng.normal(size=2),
            G=rng.normal(size=(7, n)),
            h=rng.normal(size=7) + 1.0,
        )
        a = solve_qp(p)
        b = solve_qp(p)
        assert a.status is b.status
        assert np.array_equal(a.z, b.z)
        assert a.cost == b.cost
        assert np.array_equal(a.ineq_multipliers, b.ineq_multipliers)
        assert a.iterations == b.iterations


class TestPreparedQp:
    def base_instance(self, seed=6, n=5, me=2, mi=6):
        rng = np.random.default_rng(seed)
        return QpInstance(
            P=random_psd(rng, n),
            q=rng.normal(size=n),
            A=rng.normal(size=(me, n)),
            b=rng.normal(size=me),
            G=rng.normal(size=(mi, n)),
            h=rng.normal(size=mi) + 1.0,
        )

    def test_plain_solve_matches_solve_qp(self):
        p = self.base_instance()
        direct = solve_qp(p)
        prepared = prepare_qp(p).solve()
        assert direct.status is prepared.status
        assert np.array_equal(direct.z, prepared.z)
        assert direct.cost == prepared.cost

    def test_extra_row_matches_augmented_instance(self):
        p = self.base_instance()
        rng = np.random.default_rng(7)
        prepared = prepare_qp(p)
        optimal_seen = 0
        for _ in range(8):
            row = rng.normal(size=p.n)
            rhs = float(rng.normal())
            augmented = QpInstance(
                P=p.P,
                q=p.q,
                A=p.A,
                b=p.b,
                G=np.vstack([p.G, row]),
                h=np.append(p.h, rhs),
            )
            direct = solve_qp(augmented)
            shared = prepared.solve(extra_row=row, extra_rhs=rhs)
            assert direct.status is shared.status
            if direct.status is QpStatus.OPTIMAL:
                optimal_seen += 1
                assert np.allclose(direct.z, shared.z, atol=1e-9)
                assert direct.cost == pytest.approx(shared.cost, abs=1e-9)
                assert np.allclose(
                    direct.ineq_multipliers, shared.ineq_multipliers, atol=1e-8
                )
        assert optimal_seen >= 3

    def test_extra_row_reruns_are_bitwise_identical(self):
        p = self.base_instance()
        prepared = prepare_qp(p)
        row = np.linspace(-1.0, 1.0, p.n)
        first = prepared.solve(extra_row=row, extra_rhs=0.25)
        second = prepared.solve(extra_row=row, extra_rhs=0.25)
        assert first.status is second.status
        assert np.array_equal(first.z, second.z)
        assert first.cost == second.cost

    def test_with_rhs_matches_fresh_preparation(self):
        p = self.base_instance()
        prepared = prepare_qp(p)
        rng = np.random.default_rng(8)
        for _ in range(5):
            b_new = rng.normal(size=p.num_eq)
            rebound = prepared.with_rhs(b_new)
            fresh = QpInstance(P=p.P, q=p.q, A=p.A, b=b_new, G=p.G, h=p.h)
            direct = solve_qp(fresh)
            shared = rebound.solve()
            assert direct.status is shared.status
            assert np.array_equal(direct.z, shared.z)

    def test_max_iterations_guard(self):
        p = self.base_instance()
        with pytest.raises(InvalidInputError):
            prepare_qp(p).solve(max_iterations=0)

"""Shared builders for the test suite."""

import numpy as np
import pytest

from pempc.controller import ControllerConfig, DataWindow
from pempc.hankel import Box
from pempc.plant import PlantModel, four_tank_model


def small_config(**overrides):
    """A minimal SISO controller: N=4, n=1, window T=11, excitation order 6.

    With T=11 the known part of the excitation-order-6 Hankel has 5 columns
    against 6 rows, so a random window always sits exactly one short of full
    rank: the hyperplane case with probability one.
    """
    base = dict(
        N=4,
        n=1,
        T=11,
        m=1,
        p=1,
        Q=np.eye(1),
        R=0.1 * np.eye(1),
        lambda_alpha=0.1,
        lambda_sigma=1000.0,
        u_setpoint=np.array([0.25]),
        y_setpoint=np.array([0.5]),
        input_box=Box(lower=[-4.0], upper=[4.0]),
        output_box=None,
        epsilon=0.3,
        rel_tol=1e-9,
    )
    base.update(overrides)
    return ControllerConfig(**base)


def random_window(cfg, seed, u_scale=1.0):
    rng = np.random.default_rng(seed)
    u = rng.uniform(-u_scale, u_scale, size=(cfg.T, cfg.m))
    y = rng.uniform(-1.0, 1.0, size=(cfg.T, cfg.p))
    return DataWindow(u=u, y=y)


def benchmark_config(epsilon=0.05518, **overrides):
    from pempc.config import ExperimentConfig, to_controller_config

    exp = ExperimentConfig()
    for key, value in overrides.items():
        setattr(exp, key, value)
    return to_controller_config(exp, epsilon=epsilon)


def siso_model(a=0.9):
    """One-state plant for fast closed-loop tests."""
    return PlantModel(
        A=np.array([[a]]),
        B=lambda k: np.array([[1.0]]),
        C=np.array([[1.0]]),
        D=np.array([[0.0]]),
        x0=np.array([0.0]),
    )


@pytest.fixture
def four_tank_equilibrium():
    """Equilibrium state/output of the case-1 tank under the setpoint input."""
    model = four_tank_model(1)
    us = np.array([1.0, 1.0])
    x_eq = np.linalg.solve(np.eye(4) - model.A, model.B(0) @ us)
    return us, x_eq, model.C @ x_eq

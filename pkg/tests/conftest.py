"""Shared fixtures: the three reference setups and reusable Monte Carlo ensembles."""

import time

import numpy as np
import pytest

from halfparity import XState, generate_ensemble, simulate_ensemble, symmetric_config

TAUS = {"weak": 2.10, "medium": 0.60, "strong": 0.36}


def preset_config(name, gamma=0.5, dt=0.01, T=1.6):
    return symmetric_config(tau_m=TAUS[name], eta_m=0.22, gamma=gamma, dt=dt, T=T)


@pytest.fixture(scope="session")
def weak_cfg():
    return preset_config("weak")


@pytest.fixture(scope="session")
def medium_cfg():
    return preset_config("medium")


@pytest.fixture(scope="session")
def strong_cfg():
    return preset_config("strong")


@pytest.fixture(scope="session")
def product_state():
    return XState.product_x()


@pytest.fixture(scope="session")
def weak_ensemble(weak_cfg):
    return generate_ensemble(XState.product_x(), weak_cfg, 10_000, seed=101)


@pytest.fixture(scope="session")
def medium_ensemble(medium_cfg):
    return generate_ensemble(XState.product_x(), medium_cfg, 10_000, seed=102)


@pytest.fixture(scope="session")
def strong_ensemble(strong_cfg):
    return generate_ensemble(XState.product_x(), strong_cfg, 10_000, seed=103)


class SnapshotRun:
    """A large snapshot-mode run plus how long it took to generate."""

    def __init__(self, raw, elapsed):
        self.raw = raw
        self.elapsed = elapsed


@pytest.fixture(scope="session")
def medium_snapshots(medium_cfg):
    """10^5 trajectories of the medium setup, states kept at a few probe times."""
    t0 = time.perf_counter()
    raw = simulate_ensemble(XState.product_x(), medium_cfg, 100_000, seed=2024,
                            snapshot_times=[0.3, 0.8, 1.4, 1.6])
    return SnapshotRun(raw, time.perf_counter() - t0)

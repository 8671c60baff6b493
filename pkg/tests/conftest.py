import numpy as np
import pytest
from hypothesis import settings

from tdforge.instances import GeneratorSpec, assemble, generate, standard_instance
from tdforge.linear_approx import build_feature_map
from tdforge.mdp_core import Mdp, Policy, chain_from_matrix, with_stationary
from tdforge.td_oracle import solve_fixed_point

settings.register_profile("tdforge", deadline=None, max_examples=200)
settings.load_profile("tdforge")


def two_state(a, b, reward=None, gamma=0.9):
    p = np.array([[1 - a, a], [b, 1 - b]])
    return with_stationary(chain_from_matrix(p, reward, gamma))


def zero_reward(inst):
    """Same chain and features with r = 0 everywhere."""
    mdp = Mdp(inst.mdp.n_states, inst.mdp.n_actions, inst.mdp.transition, np.zeros_like(inst.mdp.reward),
              inst.mdp.gamma)
    return assemble(mdp, inst.policy, inst.features, "zero-reward")


@pytest.fixture(scope="session")
def standard():
    return standard_instance()


@pytest.fixture(scope="session")
def standard_oracle(standard):
    return solve_fixed_point(standard.chain, standard.features)


@pytest.fixture(scope="session")
def small_instance():
    return generate(GeneratorSpec(n=8, d=3, gamma=0.9, seed=5))


@pytest.fixture(scope="session")
def small_oracle(small_instance):
    return solve_fixed_point(small_instance.chain, small_instance.features)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tabular_instance():
    inst = generate(GeneratorSpec(n=6, d=6, gamma=0.9, features="tabular", seed=8))
    assert np.array_equal(inst.features.phi, np.eye(6))
    return inst


def mdp_from_chain(p, reward, gamma):
    n = p.shape[0]
    return Mdp(n, 1, p[:, None, :], reward[:, None, :], gamma), Policy(np.ones((n, 1)))


def instance_from_chain(p, reward, phi, gamma=0.9, name="custom"):
    mdp, pol = mdp_from_chain(np.asarray(p, float), np.asarray(reward, float), gamma)
    return assemble(mdp, pol, build_feature_map(phi), name)

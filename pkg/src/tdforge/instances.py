"""Instance generators, the built-in corpus and the JSON instance format.

An instance file holds the MDP, the evaluated policy and the features::

    {"name", "n_states", "n_actions", "gamma", "transition", "reward",
     "policy", "features", "phi_inf", "pi"}

Loading re-validates stochastic rows at 1e-9 and recomputes ``phi_inf``.
"""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field

import numpy as np

from tdforge.errors import InvalidInputError, RankDeficientError
from tdforge.linear_approx import FeatureMap, adversarial_features, build_feature_map
from tdforge.mdp_core import InducedChain, Mdp, Policy, check_ergodic, induce_chain, with_stationary

LOAD_TOL = 1e-9
MAX_RETRIES = 100
CHAIN_SCHEMES = ("random-dirichlet", "two-state", "permutation-mix")
FEATURE_SCHEMES = ("random-gaussian", "tabular", "adversarial")


@dataclass(eq=False)
class Instance:
    mdp: Mdp
    policy: Policy
    features: FeatureMap
    chain: InducedChain
    name: str = "instance"

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "n_states": self.mdp.n_states,
            "n_actions": self.mdp.n_actions,
            "gamma": self.mdp.gamma,
            "transition": self.mdp.transition.tolist(),
            "reward": self.mdp.reward.tolist(),
            "policy": self.policy.probs.tolist(),
            "features": self.features.phi.tolist(),
            "phi_inf": self.features.phi_inf,
            "pi": self.chain.pi.tolist(),
        }
        return json.dumps(doc) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def with_gamma(self, gamma: float) -> "Instance":
        mdp = Mdp(self.mdp.n_states, self.mdp.n_actions, self.mdp.transition, self.mdp.reward, gamma,
                  self.mdp.row_tol)
        return assemble(mdp, self.policy, self.features, self.name)


def assemble(mdp: Mdp, policy: Policy, features: FeatureMap, name: str = "instance", pi=None) -> Instance:
    if features.n != mdp.n_states:
        raise InvalidInputError(f"features cover {features.n} states, MDP has {mdp.n_states}")
    chain = induce_chain(mdp, policy)
    ok, why = check_ergodic(chain)
    if not ok:
        raise InvalidInputError(f"ergodicity: {why}")
    if pi is None:
        chain = with_stationary(chain)
    else:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (mdp.n_states,) or abs(pi.sum() - 1.0) > LOAD_TOL \
                or np.max(np.abs(pi @ chain.p_mu - pi)) > LOAD_TOL:
            raise InvalidInputError("stored pi is not the stationary distribution of the induced chain")
        chain = InducedChain(chain.p_mu, chain.reward_mu, chain.r_inf, chain.gamma, pi)
    return Instance(mdp, policy, features, chain, name)


def from_json(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"instance is not valid JSON: {exc}") from None
    missing = {"n_states", "n_actions", "gamma", "transition", "reward", "policy", "features"} - set(doc)
    if missing:
        raise InvalidInputError(f"instance lacks fields {sorted(missing)}")
    try:
        mdp = Mdp(int(doc["n_states"]), int(doc["n_actions"]), np.array(doc["transition"], dtype=float),
                  np.array(doc["reward"], dtype=float), float(doc["gamma"]), row_tol=LOAD_TOL)
        policy = Policy(np.array(doc["policy"], dtype=float), row_tol=LOAD_TOL)
    except InvalidInputError as exc:
        raise InvalidInputError(f"row-stochastic invariant: {exc}") from None
    features = build_feature_map(np.array(doc["features"], dtype=float))
    if "phi_inf" in doc and abs(float(doc["phi_inf"]) - features.phi_inf) > LOAD_TOL:
        raise InvalidInputError(
            f"phi_inf invariant: stored {doc['phi_inf']} but features give {features.phi_inf}")
    return assemble(mdp, policy, features, doc.get("name", "instance"), doc.get("pi"))


def load_instance(path) -> Instance:
    with open(path) as fh:
        return from_json(fh.read())


_SCHEME_RE = re.compile(r"^\s*([a-z\-]+)\s*(?:\((.*)\))?\s*$")


def parse_scheme(text: str):
    """``"two-state(0.1,0.1)"`` -> ``("two-state", [0.1, 0.1])``."""
    m = _SCHEME_RE.match(text)
    if not m:
        raise InvalidInputError(f"cannot parse scheme {text!r}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) else []
    return m.group(1), args


@dataclass
class GeneratorSpec:
    n: int = 10
    d: int = 3
    gamma: float = 0.9
    chain: str = "random-dirichlet(1.0)"
    features: str = "random-gaussian"
    n_actions: int = 2
    reward_scale: float = 1.0
    seed: int = 0
    name: str = field(default="")

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown generator fields {sorted(unknown)}")
        return cls(**doc)


def _chain_mdp(spec: GeneratorSpec, rng):
    kind, args = parse_scheme(spec.chain)
    n = spec.n
    if kind == "random-dirichlet":
        conc = args[0] if args else 1.0
        if conc <= 0:
            raise InvalidInputError("Dirichlet concentration must be positive")
        m = spec.n_actions
        p = rng.dirichlet(np.full(n, conc), size=(n, m))
        mu = rng.dirichlet(np.ones(m), size=n)
    elif kind == "two-state":
        a, b = (args + [0.1, 0.1])[:2]
        if n != 2:
            raise InvalidInputError("two-state chains have n = 2")
        if not (0 < a <= 1 and 0 < b <= 1):
            raise InvalidInputError("two-state parameters must lie in (0, 1]")
        m = 1
        p = np.array([[1 - a, a], [b, 1 - b]])[:, None, :]
        mu = np.ones((n, 1))
    elif kind == "permutation-mix":
        lam = args[0] if args else 0.5
        if not 0 < lam <= 1:
            raise InvalidInputError("permutation-mix weight must lie in (0, 1]")
        m = 1
        cycle = np.roll(np.eye(n), 1, axis=1)
        p = ((1 - lam) * cycle + lam / n)[:, None, :]
        mu = np.ones((n, 1))
    else:
        raise InvalidInputError(f"unknown chain scheme {kind!r}; choose from {CHAIN_SCHEMES}")
    reward = spec.reward_scale * rng.random((n, m, n))
    return Mdp(n, m, p, reward, spec.gamma), Policy(mu)


def _features(spec: GeneratorSpec, rng) -> FeatureMap:
    kind, args = parse_scheme(spec.features)
    if kind == "random-gaussian":
        return build_feature_map(rng.normal(size=(spec.n, spec.d)))
    if kind == "tabular":
        return build_feature_map(np.eye(spec.n))
    if kind == "adversarial":
        eps = args[0] if args else 1e-2
        phi_inf = args[1] if len(args) > 1 else 1.0
        return adversarial_features(spec.n, spec.d, eps, phi_inf)
    raise InvalidInputError(f"unknown feature scheme {kind!r}; choose from {FEATURE_SCHEMES}")


def generate(spec: GeneratorSpec) -> Instance:
    """Draw an instance; retries (new draws) until the chain is ergodic."""
    if spec.n < 1 or spec.d < 1:
        raise InvalidInputError("n and d must be positive")
    if spec.reward_scale < 0:
        raise InvalidInputError("reward_scale must be nonnegative")
    if parse_scheme(spec.chain)[0] == "two-state" and spec.n != 2:
        spec = dataclasses.replace(spec, n=2, d=min(spec.d, 2))
    root = np.random.SeedSequence(spec.seed)
    last = None
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng(root.spawn(1)[0] if attempt else root)
        mdp, policy = _chain_mdp(spec, rng)
        try:
            features = _features(spec, rng)
        except RankDeficientError as exc:
            last = str(exc)
            continue
        chain = induce_chain(mdp, policy)
        ok, why = check_ergodic(chain)
        if ok:
            return assemble(mdp, policy, features, spec.name or spec.chain)
        last = why
    raise InvalidInputError(f"no ergodic instance after {MAX_RETRIES} draws ({last})")


def standard_instance(gamma: float = 0.9, reward_scale: float = 1.0) -> Instance:
    """Reference 10-state / 3-feature instance used by the acceptance runs."""
    return generate(GeneratorSpec(n=10, d=3, gamma=gamma, chain="random-dirichlet(1.0)",
                                  features="random-gaussian", reward_scale=reward_scale, seed=2024,
                                  name="standard"))


def builtin_corpus() -> list[Instance]:
    """Instances shipped for ``tdforge verify``."""
    specs = [
        GeneratorSpec(n=2, d=2, chain="two-state(0.05,0.05)", seed=11, name="two-state-slow"),
        GeneratorSpec(n=5, d=5, gamma=0.9, features="tabular", seed=12, name="tabular-5"),
        GeneratorSpec(n=6, d=3, chain="permutation-mix(0.3)", seed=13, name="permutation-mix"),
    ]
    specs += [GeneratorSpec(n=6, d=3, features=f"adversarial({eps})", seed=14, name=f"adversarial-{eps}")
              for eps in (1e-1, 1e-2, 1e-3)]
    specs += [GeneratorSpec(n=8, d=3, gamma=g, seed=20 + i, name=f"random-dirichlet-{i}")
              for i, g in enumerate((0.5, 0.9, 0.99))]
    return [generate(s) for s in specs]


def random_corpus(count: int = 20, seed: int = 0, max_n: int = 20, max_d: int = 5,
                  gammas=(0.5, 0.9, 0.99)) -> list[Instance]:
    """Random ergodic instances with ``n <= max_n``, ``d <= min(n, max_d)``; gamma cycles through ``gammas``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(2, max_n + 1))
        d = int(rng.integers(1, min(n, max_d) + 1))
        spec = GeneratorSpec(n=n, d=d, gamma=gammas[i % len(gammas)], n_actions=int(rng.integers(1, 4)),
                             seed=int(rng.integers(2**31)), name=f"random-{i}")
        out.append(generate(spec))
    return out

"""Self-checks for the exact tabular algorithm and the neural loss gradients.

Every check returns a :class:`CheckResult` with the worst error seen and the
tolerance it was held to.  All randomness derives from one seed, so a
battery run is reproducible record for record.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import tabular
from .envs import EnvSpec, random_decgame
from .trainer import Minibatch, Nets, TrainConfig, guider_loss, learner_loss, value_loss
from .nets import guider_inputs


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tol: float
    cases: int
    detail: str = ""

    def __post_init__(self):
        # checks compute with numpy scalars; keep the record JSON-friendly
        self.passed = bool(self.passed)
        self.max_error = float(self.max_error)
        self.tol = float(self.tol)
        self.cases = int(self.cases)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max error {self.max_error:.3e} (tol {self.tol:.0e}, {self.cases} cases){' - ' + self.detail if self.detail else ''}"

    def to_dict(self):
        return asdict(self)


def random_instances(count, rng, max_states=6, max_agents=3, max_actions=3):
    """(game, learner, ordering) triples of small random games."""
    out = []
    for _ in range(count):
        S = int(rng.integers(2, max_states + 1))
        n = int(rng.integers(2, max_agents + 1))
        A = int(rng.integers(2, max_actions + 1))
        game = random_decgame(S, n, A, seed=int(rng.integers(2**31)))
        learner = tabular.TabularLearner.random(n, S, A, rng)
        ordering = tuple(int(i) for i in rng.permutation(n))
        out.append((game, learner, ordering))
    return out


# ---------------------------------------------------------------------------
# tabular checks
# ---------------------------------------------------------------------------


def check_monotonicity(rng, games=20, etas=(0.1, 1.0, 10.0), iters=200, tol=1e-9):
    """V_rho never drops by more than ``tol`` along the exact iteration."""
    worst = 0.0
    failures = 0
    cases = 0
    for game, learner, ordering in random_instances(games, rng):
        for eta in etas:
            hist = tabular.magpo_tabular_iterate(game, learner, eta, iters, ordering, check=False)
            v = np.array([h[1] for h in hist])
            drop = float(max(0.0, -(np.diff(v)).min()))
            worst = max(worst, drop)
            failures += drop > tol
            cases += 1
    return CheckResult("monotonic improvement", failures == 0, worst, tol, cases,
                       f"{failures} decreasing runs" if failures else "")


def check_decomposition(rng, count=50, tol=1e-10):
    errs = [tabular.advantage_decomposition_check(g, l, o) for g, l, o in random_instances(count, rng)]
    worst = float(max(errs))
    return CheckResult("advantage decomposition", worst <= tol, worst, tol, count)


def check_sequential_equivalence(rng, count=10, tol=1e-6):
    errs = []
    for game, learner, ordering in random_instances(count, rng):
        eta = float(rng.uniform(0.1, 5.0))
        errs.append(tabular.sequential_update_equivalence_check(game, learner, eta, ordering))
    worst = float(max(errs))
    return CheckResult("projected guider equals sequential update", worst <= tol, worst, tol, count)


def check_closed_form(rng, count=10, candidates=1000, eta=1.0):
    """The closed-form guider beats ``candidates`` random joints in every state.

    ``max_error`` is the largest margin by which any candidate exceeded it
    (zero when none did).
    """
    worst = 0.0
    for game, learner, ordering in random_instances(count, rng):
        Q = tabular.policy_eval(game, learner).Q
        anchor = learner.joint()
        mu_hat = tabular.pmd_guider_update(game, learner, eta, ordering).joint()
        best = tabular.pmd_objective(Q, anchor, mu_hat, eta)
        S = game.num_states
        K = game.num_actions ** game.num_agents
        cand = rng.dirichlet(np.ones(K), size=(candidates, S))
        for c in cand:
            val = tabular.pmd_objective(Q, anchor, c.reshape(anchor.shape), eta)
            worst = max(worst, float((val - best).max()))
    return CheckResult("closed-form guider optimality", worst <= 0.0, worst, 0.0, count,
                       f"{candidates} random joints per instance")


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------


def random_minibatch(nets: Nets, batch_size, state_dim, obs_dim, rng):
    """Synthetic batch whose behaviour log-probs differ from both policies."""
    n, A = nets.num_agents, nets.num_actions
    states = rng.standard_normal((batch_size, state_dim))
    obs = rng.standard_normal((batch_size, n, obs_dim))
    actions = rng.integers(0, A, size=(batch_size, n))
    old = rng.dirichlet(np.ones(A), size=(batch_size, n))
    old_logp = np.log(np.take_along_axis(old, actions[..., None], axis=2)[..., 0])
    return Minibatch(
        g_in=guider_inputs(states, actions, n, A),
        l_in=nets.learner_x(obs),
        states=states,
        actions=actions,
        old_logp=old_logp,
        adv=rng.standard_normal(batch_size),
        returns=rng.standard_normal(batch_size),
    )


def _grad_error(fn, x, coords, h):
    _, g = ad.value_and_grad(lambda p: fn(p), x)
    worst = 0.0
    for i in coords:
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (float(fn(xp).value) - float(fn(xm).value)) / (2 * h)
        denom = max(abs(fd), abs(g[i]), 1e-6)
        worst = max(worst, abs(fd - g[i]) / denom)
    return worst


def loss_gradient_errors(rng, batches=5, coords=64, h=1e-5, delta=1.5, aux_weight=1.0):
    """Worst relative error of autodiff vs central differences, per loss."""
    cfg = TrainConfig(hidden=(16, 16), delta=delta, aux_weight=aux_weight)
    spec = EnvSpec(num_agents=3, num_actions=4, obs_dim=5, horizon=10, state_dim=6)
    nets = Nets.for_env(spec, cfg)
    errs = {"guider": 0.0, "learner": 0.0, "value": 0.0}
    for _ in range(batches):
        params = {k: v.data + 0.5 * rng.standard_normal(v.data.size)
                  for k, v in nets.init(rng).items()}
        mb = random_minibatch(nets, 24, spec.state_dim, spec.obs_dim, rng)
        fns = {
            "guider": (lambda p: guider_loss(mb, p, params["learner"], nets, cfg)[0], "guider"),
            "learner": (lambda p: learner_loss(mb, p, params["guider"], nets, cfg)[0], "learner"),
            "value": (lambda p: value_loss(mb, p, nets, cfg), "critic"),
        }
        for name, (fn, key) in fns.items():
            x = params[key]
            idx = rng.choice(x.size, size=min(coords, x.size), replace=False)
            errs[name] = max(errs[name], _grad_error(fn, x.copy(), idx, h))
    return errs


def check_gradients(rng, batches=5, coords=64, tol=1e-4):
    errs = loss_gradient_errors(rng, batches, coords)
    return [CheckResult(f"{name} loss gradient", e < tol, e, tol, batches, f"{coords} coordinates per batch")
            for name, e in errs.items()]


# ---------------------------------------------------------------------------
# battery
# ---------------------------------------------------------------------------


def run_battery(seed=0, games=20, iters=200):
    """All checks with independent sub-streams of ``seed``."""
    def sub(k):
        return np.random.default_rng(np.random.SeedSequence([int(seed), 100 + k]))

    results = [
        check_monotonicity(sub(0), games=games, iters=iters),
        check_decomposition(sub(1)),
        check_sequential_equivalence(sub(2)),
        check_closed_form(sub(3)),
    ]
    results += check_gradients(sub(4))
    return results

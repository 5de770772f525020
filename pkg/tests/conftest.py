import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20190419)


def power_series_occupancy(mdp, probs, horizon=2000):
    """Forward iteration of P(s_t = s), summed with weights (1 - gamma) gamma^t."""
    P = np.einsum("sa,sat->st", probs, mdp.transition)
    dist = mdp.init.copy()
    acc = np.zeros(mdp.n_states)
    w = 1.0 - mdp.gamma
    for _ in range(horizon + 1):
        acc += w * dist
        dist = dist @ P
        w *= mdp.gamma
    return acc


def sample_discounted_transitions(mdp, probs, n, rng):
    """Draw ``n`` (s, a, s') triples from the normalized joint occupancy.

    Each chain runs for a Geometric(1 - gamma) number of steps and reports the
    transition taken at its stopping time.
    """
    stop = rng.geometric(1.0 - mdp.gamma, size=n) - 1
    s = rng.choice(mdp.n_states, size=n, p=mdp.init)
    a_cdf = np.cumsum(probs, axis=1)
    t_cdf = np.cumsum(mdp.transition, axis=2)
    out = np.empty((n, 3), dtype=np.int64)
    active = np.arange(n)
    t = 0
    while active.size:
        ss = s[active]
        a = (rng.random(active.size)[:, None] > a_cdf[ss]).sum(axis=1)
        a = np.minimum(a, mdp.n_actions - 1)
        sn = (rng.random(active.size)[:, None] > t_cdf[ss, a]).sum(axis=1)
        sn = np.minimum(sn, mdp.n_states - 1)
        done = stop[active] == t
        out[active[done]] = np.stack([ss[done], a[done], sn[done]], axis=1)
        s[active] = sn
        active = active[~done]
        t += 1
    return out


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)

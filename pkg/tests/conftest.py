import numpy as np
import pytest

from normweaver.mdp import MdpBuilder

# filled by the acceptance tests: criterion number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, atoms=("p", "q"),
               max_succ: int = 2):
    """Random labeled MDP; every state has at least one action."""
    b = MdpBuilder(atoms)
    names = [f"s{i}" for i in range(n_states)]
    for name in names:
        b.state(name, [a for a in atoms if rng.random() < 0.5])
    acts = [f"a{j}" for j in range(n_actions)]
    for a in acts:
        b.action(a)
    for name in names:
        chosen = [a for a in acts if rng.random() < 0.7] or [acts[rng.integers(n_actions)]]
        for a in chosen:
            k = int(rng.integers(1, max_succ + 1))
            dst = rng.choice(n_states, size=min(k, n_states), replace=False)
            w = rng.random(len(dst)) + 0.1
            w = w / w.sum()
            for t, p in zip(dst, w):
                b.add(name, a, names[t], float(p))
    return b.build(names[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")

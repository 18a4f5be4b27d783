import numpy as np
import pytest

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


@pytest.fixture
def rot():
    return ROT.copy()


def random_spec(rng, d, lam=0.0, noise_var=0.0, T=1.0):
    from critnet.model import ProblemSpec

    R = np.eye(d) + 0.5 * rng.standard_normal((d, d))
    M = rng.standard_normal((d, d))
    return ProblemSpec(R, np.eye(d) + 0.3 * M @ M.T, T, lam, noise_var)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def report(k: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def smooth_random_path(rng, d, N=200, modes=4, scale=0.8, T=1.0):
    """Random weight path made of a few cosine modes, well resolved on the grid."""
    from critnet.model import WeightPath

    t = np.linspace(0.0, T, N + 1)
    B = scale * rng.standard_normal((modes, d, d))
    return WeightPath(np.einsum("tk,kij->tij", np.cos(np.pi * np.outer(t / T, np.arange(modes))), B), T)

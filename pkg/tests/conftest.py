import numpy as np
import pytest

from compabs.geometry import Box, UniformGrid, product_grid
from compabs.interconn import abstract_interconnection, decompose, fit_lasso
from compabs.subsys_abs import abstract_subsystem
from compabs.sysmodel import (
    BlackBoxInterconnection,
    BlackBoxSubsystem,
    Network,
    collect_interconnection_data,
)


def toy_subsystem(gain=0.5, coupling=0.25):
    """Contractive scalar system on [0, 4]: x' = gain x + coupling w + 0.5 u + 0.5."""
    return BlackBoxSubsystem(
        Box([0.0], [4.0]),
        Box([-1.0], [1.0]),
        Box([0.0], [4.0]),
        lambda x, u, w: np.clip(gain * x + coupling * w + 0.5 * u + 0.5, -10, 10),
        name="toy",
    )


def toy_network(n=2):
    subs = [toy_subsystem() for _ in range(n)]
    ic = BlackBoxInterconnection(
        Box([0.0] * n, [4.0] * n), Box([0.0], [4.0]),
        lambda x: np.mean(x, axis=1, keepdims=True), name="mean")
    return Network(subs, ic, [[0] for _ in range(n)])


def build_toy(n=2, n_c=20, seed=0, eta=1.0):
    net = toy_network(n)
    grids = []
    abs_ = []
    for s in net.subsystems:
        sg = UniformGrid(s.state_domain, eta)
        ug = UniformGrid(s.external_input_domain, 1.0)
        wg = UniformGrid(s.internal_input_domain, eta)
        abs_.append(abstract_subsystem(s, sg, ug, wg, (0.5, 0.25), n_c))
        grids.append(sg)
    data = collect_interconnection_data(net.interconnection, 200, seed, n_fit=20)
    est = fit_lasso(data, 0.0)
    dec = decompose(est.matrix, 4)
    ia = abstract_interconnection(dec, product_grid(grids), UniformGrid(net.interconnection.output_domain, eta),
                                  data, est, 1.0, eta)
    return net, abs_, ia


@pytest.fixture(scope="session")
def toy2():
    return build_toy(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

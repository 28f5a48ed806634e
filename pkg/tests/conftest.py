import logging
import warnings

import numpy as np
import pytest

from logcontrast.composition import build_design, log_transform, total_sum_normalize
from logcontrast.simulate import (
    beta_star,
    constraint_sim,
    gen_covariates,
    gen_response,
    inject_outliers,
    replicate_rng,
)


@pytest.fixture(autouse=True)
def _quiet():
    logging.getLogger("logcontrast").setLevel(logging.ERROR)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


def sim_problem(n=80, p=30, O=8, shift=8.0, seed=0):
    """Small version of the benchmark data on the fit scale.

    Returns ``(design, C_fit, y, true_outliers, sigma)``.
    """
    rng = replicate_rng(seed, 0)
    W = gen_covariates(n, p, rng)
    Z = log_transform(total_sum_normalize(W))
    y, sigma = gen_response(Z, beta_star(p), 3.0, rng)
    y, true = inject_outliers(y, O, shift * sigma)
    design = build_design(Z, np.ones((n, 1)))
    C = constraint_sim(p).rescaled(design.col_scale)
    return design, C, y, true, sigma


@pytest.fixture
def small_sim():
    return sim_problem()


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE]
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number, name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {name}: {detail}"
        lines.append(line)
        if reporter is not None:
            reporter.write_line("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_ACCEPTANCE]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)

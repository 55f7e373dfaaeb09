import numpy as np
import pytest

from anisoflow.experiments import pipe_doc
from anisoflow.material import DesignField
from anisoflow.task import task_from_dict


def random_design(n_cells, dim, rng, margin=0.05):
    return DesignField(
        rho=rng.uniform(margin, 1 - margin, n_cells),
        eps=rng.uniform(margin, 1 - margin, n_cells),
        alpha=rng.uniform(-np.pi, np.pi, (n_cells, dim - 1)),
    )


def small_task(n=8, **kw):
    doc = pipe_doc(n=n, block_size=kw.pop("block_size", 4), **kw)
    return task_from_dict(doc)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def task8():
    return small_task(8)


def free_slip_channel(n=16, half=0.25, band=2):
    """Horizontal channel of half-width ``half`` lined with ``band`` free-slip cells."""
    from anisoflow.material import DesignField

    doc = {
        "grid": {"dim": 2, "cells": [n, n], "block_size": 4},
        "patches": [
            {"id": "in", "face": "x-", "role": "inlet", "center": [0.5], "extent": [2 * half],
             "velocity": [1.0, 0.0]},
            {"id": "out", "face": "x+", "role": "outlet", "center": [0.5], "extent": [2 * half],
             "target": [1.0, 0.0]},
        ],
    }
    task = task_from_dict(doc)
    g = task.grid
    dist = np.abs(g.cell_centers()[:, 1] - 0.5)
    design = DesignField.uniform(g.n_cells, 2, rho=0.0)
    fluid = dist < half
    wall = (dist > half) & (dist < half + band * g.h)
    design.rho[fluid | wall] = 1.0
    design.eps[wall] = 0.0
    design.alpha[wall] = np.pi / 2
    return task, design


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

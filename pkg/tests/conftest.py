"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from stochflow import Field, TorusGrid


@pytest.fixture(scope="session")
def grid32():
    return TorusGrid(dim=2, n=32, length=2 * np.pi)


@pytest.fixture(scope="session")
def grid16():
    return TorusGrid(dim=2, n=16, length=2 * np.pi)


def taylor_green_values(grid, amplitude=1.0):
    x = grid.coords[..., 0]
    y = grid.coords[..., 1]
    return amplitude * np.stack(
        [np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], axis=-1
    )


def shear_values(grid, amplitude=1.0):
    y = grid.coords[..., 1]
    return amplitude * np.stack([np.sin(y), np.zeros_like(y)], axis=-1)


def constant_values(grid, c):
    c = np.asarray(c, dtype=float)
    return np.broadcast_to(c, grid.shape + (grid.dim,)).copy()


def taylor_green_field(grid, amplitude=1.0):
    return Field(grid, taylor_green_values(grid, amplitude))


def shear_field(grid, amplitude=1.0):
    return Field(grid, shear_values(grid, amplitude))


def rel_l2(a, b):
    d = a - b
    return float(
        np.sqrt(np.mean(np.sum(d * d, axis=-1)))
        / np.sqrt(np.mean(np.sum(b * b, axis=-1)))
    )


def rel_linf(a, b):
    return float(np.abs(a - b).max() / np.abs(b).max())

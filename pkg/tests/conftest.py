import numpy as np
import pytest

from vasosim import acoustics, hemogrid


@pytest.fixture
def model():
    return hemogrid.ArteryModel()


@pytest.fixture
def pulse():
    return acoustics.PulseSpec.axial(omega=2 * np.pi * 1e5, amp_forward=1.0,
                                     amp_reflected=0.0, c=1540.0)


def make_grid(nx, nt=1, dx=1e-3, dt=1e-6, s_max=5.0, cfl=1.0):
    return hemogrid.Grid(nx=nx, nt=nt, dx=dx, dt=dt, s_max=s_max, cfl=cfl)


def stenotic_column(model, nx, center, width, depth):
    i = np.arange(nx)
    return model.r0 * (1 - depth * np.exp(-0.5 * ((i - center) / width) ** 2))

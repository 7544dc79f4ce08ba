import numpy as np
import pytest

from wienercub import AffineField, MultiPoly, VectorFieldSystem

# A two-field affine pair with nonvanishing commutator, used wherever a test
# needs noncommuting dynamics with known, well-conditioned behavior.
A0 = ((0.2, -0.4), (0.3, 0.1))
B0 = (0.1, -0.2)
A1 = ((0.0, 0.5), (-0.3, 0.2))
B1 = (0.4, 0.3)
X_START = (0.7, -0.3)


@pytest.fixture
def noncommuting_system() -> VectorFieldSystem:
    return VectorFieldSystem((AffineField(A0, B0), AffineField(A1, B1)))


@pytest.fixture
def cubic_payoff() -> MultiPoly:
    # f(y) = y0^3 + 0.5 y1^2 - y0 y1
    return MultiPoly(2, {(3, 0): 1.0, (0, 2): 0.5, (1, 1): -1.0})


@pytest.fixture
def x_start() -> np.ndarray:
    return np.array(X_START)

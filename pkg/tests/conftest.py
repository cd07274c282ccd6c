import warnings

import numpy as np
import pytest
from hypothesis import strategies as st

from spcregion.channel import REFERENCE_CHANNEL, ChannelConfig, PowerPartition


@pytest.fixture(autouse=True)
def _quiet_trial_steps():
    # Line searches probe points outside the log domain; the resulting NaNs are rejected.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def ref():
    return REFERENCE_CHANNEL


@st.composite
def channels(draw):
    P = [draw(st.floats(0.1, 50.0)) for _ in range(2)]
    ladders = []
    for _ in range(2):
        n1 = draw(st.floats(0.05, 5.0))
        d = [draw(st.floats(0.01, 5.0)) for _ in range(2)]
        ladders.append((n1, n1 + d[0], n1 + d[0] + d[1]))
    return ChannelConfig(P[0], P[1], ladders[0], ladders[1])


@st.composite
def partitions(draw):
    out = []
    for _ in range(2):
        a = draw(st.floats(0.0, 1.0))
        b = draw(st.floats(0.0, 1.0))
        if a + b > 1.0:
            a, b = a / (a + b), b / (a + b)
            b = min(b, 1.0 - a)
        out += [a, b]
    return PowerPartition(*out)


@st.composite
def interior_partitions(draw):
    out = []
    for _ in range(2):
        a = draw(st.floats(0.01, 0.9))
        b = draw(st.floats(0.01, 0.98 - a))
        out += [a, b]
    return PowerPartition(*out)


def close(a, b, tol=1e-12):
    return np.allclose(a, b, rtol=tol, atol=tol)

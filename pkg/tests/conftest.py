import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# Property tests drive a pure-python tensor engine; the default deadline is
# too twitchy for that, so give every profile generous budgets.
settings.register_profile(
    "package",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("package")


@pytest.fixture
def rng():
    return np.random.default_rng(0)

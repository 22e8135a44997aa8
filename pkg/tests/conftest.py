import json
import sys
from importlib import resources
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def goldens():
    return json.loads(resources.files("bellsim.data").joinpath("goldens.json").read_text())


@pytest.fixture(scope="session")
def eq3():
    from bellsim.models import demo_model

    return demo_model("demo_eq3")


@pytest.fixture(scope="session")
def timetag():
    from bellsim.models import demo_model

    return demo_model("demo_timetag")

import pytest
from hypothesis import HealthCheck, settings

from cutpattern.materials import ETFE_MODEL2, PVC_MODEL1, EtfeBilinear, OrthotropicElastic

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def pvc():
    return OrthotropicElastic(**PVC_MODEL1)


@pytest.fixture
def etfe():
    return EtfeBilinear(**ETFE_MODEL2)


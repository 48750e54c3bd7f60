import numpy as np
import pytest

from poisproj import catalog
from poisproj.numeric import OpaqueTable, constant_opaque, scalar_opaque


@pytest.fixture(scope="session")
def sigma_linear_ops():
    c = 0.7
    return OpaqueTable({
        **scalar_opaque("sigma", [lambda z: c * z,
                                  lambda z: c * np.ones_like(z),
                                  lambda z: np.zeros_like(z)]),
        **constant_opaque("m", 1.0),
    })


@pytest.fixture(scope="session")
def sigma_quadratic_ops():
    return OpaqueTable({
        **scalar_opaque("sigma", [lambda z: z * z, lambda z: 2 * z,
                                  lambda z: 2 * np.ones_like(z),
                                  lambda z: np.zeros_like(z)]),
        **constant_opaque("m", 1.0),
    })

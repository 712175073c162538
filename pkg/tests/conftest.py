import time

import pytest

from tandem.adversary import SeededRng
from tandem.commitments import generate_aux_group
from tandem.groups import get_group
from tandem.state import TandemParams, setup


@pytest.fixture(scope="session")
def toy_group():
    return get_group("toy61")


@pytest.fixture(scope="session")
def bls_group():
    return get_group("bls12_381")


@pytest.fixture(scope="session")
def toy_aux():
    return generate_aux_group(512, 128, rng=SeededRng(7))


@pytest.fixture(scope="session")
def toy_params_k2(toy_aux):
    return TandemParams(
        group_name="toy61", ell=16, k=2, rate_limit=4, epoch_len=86400,
        modulus_bits=512, beta=96, aux_modulus=toy_aux.modulus, aux_order=toy_aux.order,
    )


def mid_epoch_clock(params):
    """Frozen clock pinned to the middle of the current epoch, so no test
    can straddle an epoch boundary."""
    now = int(time.time())
    pinned = (now // params.epoch_len) * params.epoch_len + params.epoch_len // 2
    return lambda: float(pinned)


@pytest.fixture()
def toy_state_k2(toy_params_k2):
    return setup(toy_params_k2, rng=SeededRng(42), now_fn=mid_epoch_clock(toy_params_k2))


@pytest.fixture(scope="session")
def small_homenc():
    from tandem import homenc

    return homenc.keygen(512, 96, rng=SeededRng(5))

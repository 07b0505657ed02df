"""Shared fixtures: a small participant and a quickly trained decoder so the
loop/server/CLI tests exercise the real pipeline without long training."""

import numpy as np
import pytest

from myoloop.dataset import RecordingProtocol, record_session, supervised_arrays
from myoloop.nnet import TrainConfig, train
from myoloop.nnet.models import shallow_spec
from myoloop.synthem import don_sleeve, make_participant


@pytest.fixture(scope="session")
def participant():
    return make_participant(seed=0)


@pytest.fixture(scope="session")
def placement(participant):
    return don_sleeve(participant, seed=1)


@pytest.fixture(scope="session")
def quick_decoder(participant, placement):
    protocol = RecordingProtocol(repetitions=4, rest_baseline_s=2.0)
    session = record_session(participant, placement, protocol, seed=3, session_id="fit")
    train_x, train_y, val_x, val_y = supervised_arrays(session)
    cfg = TrainConfig(max_epochs=60, seed=4)
    decoder, _ = train(shallow_spec(hidden=128), (train_x, train_y), (val_x, val_y), cfg, arch="shallow")
    return decoder

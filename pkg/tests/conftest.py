import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from boundary_sim import Simulator, TaskApi, make_config  # noqa: E402
from boundary_sim.services import socket_pair_over_loopback  # noqa: E402


@pytest.fixture
def linked():
    """A simulator under ``config`` with an unstarted linked app and its API."""
    def build(config=None, **kw):
        sim = Simulator(config if config is not None else make_config(baseline="linked"), **kw)
        task = sim.launch_linked_app(None, "app --", start=False)
        return sim, task, TaskApi(task)
    return build


@pytest.fixture
def connected(linked):
    """Linked app plus a peer process joined by a loopback socket."""
    def build(config=None, **kw):
        sim, task, api = linked(config, **kw)
        peer = sim.spawn_process(None, node="peer", start=False)
        fd, pfd = socket_pair_over_loopback(task, peer)
        return sim, task, api, fd, peer, pfd
    return build

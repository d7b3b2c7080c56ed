"""
Driving the simulator by hand
=============================

A linked application and an ordinary process on two nodes talk over a
loopback socket pair. The per-node ledgers show what each side paid.
"""

from boundary_sim import Simulator, make_config
from boundary_sim.services import socket_pair_over_loopback

sim = Simulator(make_config(ret=True))


# Task bodies are generators over a TaskApi; every ``yield from`` is a
# point where virtual time can pass.
def server(api):
    request = yield from api.read(server_fd, 64)
    yield from api.write(server_fd, request.upper())
    return request


def client(api):
    yield from api.write(client_fd, b"hello boundary")
    return (yield from api.read(client_fd, 64))


app = sim.launch_linked_app(server, "server -- --verbose", start=False)
proc = sim.spawn_process(client, node="client", start=False)
server_fd, client_fd = socket_pair_over_loopback(app, proc)
app.node.start(app)
proc.node.start(proc)
sim.run()

print("argv seen by the app:", app.cmdline)
print("server got:", app.exit_value, "| client got:", proc.exit_value)

# The linked app skips the mode switch, the process pays for it.
for task in (app, proc):
    counts = {e.value: n for e, n in task.node.ledger.counts.items() if n}
    print(f"{task.node.name:>7}: {task.node.ledger.cycles():>7} cycles {counts}")
print("makespan:", sim.makespan())

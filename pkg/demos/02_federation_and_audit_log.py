"""Simulated federation: local data stays put and every message is logged.

Run: python3 demos/02_federation_and_audit_log.py
"""

import numpy as np

from fedspar.dp_core import PrivacyBudget, Released, Rng
from fedspar.fednet import FederatedRun, PayloadKind, ProtocolFault, aggregate, round_broadcast, round_gather
from fedspar.model import make_true_model, sample_federation

rng = Rng(3)
truth = make_true_model(m=4, d=6, s_star=2, s0=1, sigma=0.5, rng=rng.child("model"))
data = sample_federation(truth, 50, rng.child("data"))
print("coefficients per machine (one shared coordinate, one local):")
print(np.round(truth.beta_per_machine, 3))

run = FederatedRun(data, None, rng.child("run"))

# Machines only ever return summaries computed inside their own view.
msgs = round_gather(run, lambda view: view.X.T @ view.y / view.n)
print(f"\naverage of X^T y / n across machines: {np.round(aggregate(msgs) / run.m, 3)}")

# Anything the server sends back must carry a privacy tag.
round_broadcast(run, Released(np.zeros(6), PrivacyBudget(1.0, 1e-5), "demo"))
try:
    round_broadcast(run, np.zeros(6))
except ProtocolFault as exc:
    print(f"untagged broadcast refused: {exc}")

print("\nmessage log:")
for e in run.log:
    print(f"  round {e.round} {e.direction.value:18s} machine {e.machine_id!s:4} {e.kind.value:10s} "
          f"shape {e.shape} sha256 {e.digest[:12]}")
print(f"allowed payload kinds: {[k.value for k in PayloadKind]}")

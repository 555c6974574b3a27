"""What a flooding attack does to one measurement link.

Each meter reports over its own M/M/1 link.  A DoS attacker raises the
arrival rate, which shortens inter-arrival times and lengthens the time in
the queue.  The grid values themselves are untouched.
"""
import numpy as np

from gridshield.netsim import (
    AttackTrafficModel,
    QueueParams,
    gen_attacked_channels,
    gen_normal_channels,
    mean_iat,
    mm1_sojourn,
)

q = QueueParams(lam=10.0, mu=40.0, poll_interval=4.0)
print(f"closed form: mean IAT {mean_iat(q.lam):.4f} s, mean TD {mm1_sojourn(q.lam, q.mu):.4f} s")

normal = gen_normal_channels(q, 50_000, seed=1)
print(f"simulated  : mean IAT {normal.iat.mean():.4f} s, mean TD {normal.td.mean():.4f} s, "
      f"mean PC {normal.pc.mean():.1f}")

# Severity s multiplies the arrival rate; at s=3.5 the link runs at 88% load.
for s in (1.5, 2.5, 3.5):
    att = gen_attacked_channels(q, AttackTrafficModel(severity=s), 50_000, seed=2)
    print(f"severity {s}: IAT {att.iat.mean():.4f}  TD {att.td.mean():.4f}  PC {att.pc.mean():.1f}  "
          f"overloaded {np.mean(att.overload):.1%}")

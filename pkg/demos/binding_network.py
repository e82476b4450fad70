"""Six coupled oscillators learn which pre-neuron group to follow.

Run with ``python demos/binding_network.py``. Takes about half a minute.

Two RF injectors at 7.05 GHz, in anti-phase, lock the pre-neurons N1, N2
(group A) and N3, N4 (group B). The post-neurons Na and Nb receive the
pre-neuron read voltages through a 2x2 memristive crossbar. Spike-timing
learning with lateral inhibition runs for the first 120 ns, after which the
crossbar is frozen and the phases are measured. At 200 ns the injectors
are switched off and the groups drift apart.
"""
from astrosync.experiments.config import ExperimentConfig, NetworkBlock
from astrosync.experiments.runners import run_experiment

c = ExperimentConfig(experiment="binding", seed=3, runs=5,
                     network=NetworkBlock(i_dc=403.4375e-6, duration=300e-9, revoke_at=200e-9,
                                          revoke_duration=100e-9))
s = run_experiment(c)
for r in s.runs:
    within = f"{r['within']:.1f}" if r["within"] is not None else "-"
    cross = f"{r['cross']:.1f}" if r["cross"] is not None else "-"
    print(f"seed {r['seed_index']}: {r['label']:<12} within-group {within:>6} deg, cross-group {cross:>6} deg")

m = s.metrics
print(f"configurations seen: {m['configurations']}")
print("after revocation, circular std of pair phases across seeds:",
      {k: round(v) for k, v in m["revoked_phase_circstd"].items()})
print(f"pre-neuron spike rate after revocation {m['revoked_frequency_mean'] / 1e9:.4f} GHz, "
      f"free-running {m['free_running_frequency_mean'] / 1e9:.4f} GHz")
# the posts still receive the now incoherent crossbar drive and slip cycles
print(f"post-neuron spike rate after revocation {m['post_revoked_frequency_mean'] / 1e9:.4f} GHz")

"""Plant co-failing groups in a synthetic run matrix and recover them.

Run: python3 demos/cluster_synthetic.py
"""

from flakesift.cluster import agglomerate, select_threshold, sweep
from flakesift.cooccur import build_distance_matrix
from flakesift.ingest import failure_signatures, identify_flaky_tests
from flakesift.synth import ClusterSpec, SynthSpec, adjusted_rand_index, generate

spec = SynthSpec(
    runs=400,
    clusters=(ClusterSpec(6, 0.08, 0.97), ClusterSpec(5, 0.06, 0.97), ClusterSpec(4, 0.05, 0.97)),
    independent_flaky=4,
    stable_tests=10,
    seed=1,
)
ds, truth = generate(spec)
print(f"{len(ds.tests)} tests over {spec.runs} runs, {len(identify_flaky_tests(ds))} flaky")

sigs = failure_signatures(ds)
dm = build_distance_matrix(sigs)
dg = agglomerate(dm)
print("threshold  clusters  mean silhouette")
for t, k, mean in sweep(dm, dg)[:8]:
    print(f"{t:9.3f}  {k:8d}  {mean:15.3f}")

cc = select_threshold(dm)
if cc is None:
    print("no cut reaches the silhouette floor")
else:
    found = cc.as_dict()
    print(f"chosen threshold {cc.threshold:.3f}, silhouette {cc.mean_silhouette:.3f}")
    print(f"ARI against the planted groups: {adjusted_rand_index(truth, {t: found[t] for t in truth}):.3f}")

"""Write a triage dossier for each recovered cluster and print the first one.

Run: python3 demos/triage_dossier.py
"""

from flakesift.config import Config
from flakesift.pipeline import cluster_project
from flakesift.synth import ClusterSpec, SynthSpec, generate
from flakesift.triage import dossier, dossier_markdown

ds, _ = generate(SynthSpec(runs=300, clusters=(ClusterSpec(5, 0.1, 0.97), ClusterSpec(4, 0.08, 0.97)),
                           independent_flaky=2, seed=2))
stage = cluster_project(ds, Config())
print(f"{len(stage.report.clusters)} clusters")
for c in stage.report.clusters[:1]:
    print(dossier_markdown(dossier(ds, stage.signatures, c.id, c.members, k=3, seed=0)))

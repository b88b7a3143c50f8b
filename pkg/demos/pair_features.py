"""Static distances between test pairs: names, code and package hierarchy.

Run: python3 demos/pair_features.py
"""

from flakesift.ingest import TestId
from flakesift.strdist import FEATURE_NAMES, feature_vector, hierarchy_distance, jaro_winkler, levenshtein, tokenize_name
from flakesift.synth import ClusterSpec, SynthSpec, generate

a = TestId.parse("org.shop.cart.CartServiceTest#addsItemToCart")
b = TestId.parse("org.shop.cart.CartServiceTest#removesItemFromCart")
c = TestId.parse("org.shop.billing.InvoiceTest#roundsTotals")
print("tokens of a:", sorted(tokenize_name(a)))
print("levenshtein(a, b) on names:", levenshtein(a.method_name, b.method_name))
print("jaro-winkler distance(a, b):", round(jaro_winkler(a.method_name, b.method_name), 3))
print("hierarchy distance a-b:", hierarchy_distance(a, b), " a-c:", round(hierarchy_distance(a, c), 3))

ds, _ = generate(SynthSpec(runs=50, clusters=(ClusterSpec(2, 0.2, 0.9), ClusterSpec(2, 0.2, 0.9)), seed=0))
t1, t2, t3 = ds.tests[:3]
for u, v in ((t1, t2), (t1, t3)):
    print(f"\n{u}  vs  {v}")
    for name, value in zip(FEATURE_NAMES, feature_vector(u, v, ds)):
        print(f"  {name:24s} {value:8.3f}")

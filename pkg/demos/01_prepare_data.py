"""
Loading, filtering and splitting interactions
=============================================

The bundled fixture is a 500-user MovieLens-style ratings file. We parse it,
apply 5-core filtering, and hold out each user's two most recent events.
Pass a path to ML-1M's ratings.dat to run the same steps on the real data.
"""

import sys

from weakrec import corpus, fixture

if len(sys.argv) > 1:
    log = corpus.load_log(sys.argv[1], "movielens")
else:
    log = fixture.load_ratings()
print(f"raw records: {len(log)}")

# iterative k-core: users and items with fewer than 5 events are removed until nothing changes
filtered = corpus.kcore_filter(log, 5)
ds = corpus.build_dataset(filtered)
m, n, sparsity = corpus.dataset_stats(ds)
print(f"after 5-core: {m} users, {n} items, sparsity {sparsity:.4f}")

split = corpus.loo_split(ds)
u = 0
print(f"user {split.user_ids[u]}: {len(split.train[u])} train events,"
      f" valid item {split.item_ids[split.valid[u].item]}, test item {split.item_ids[split.test[u].item]}")

# the split round-trips through train/valid/test CSV files
corpus.write_split(split, "demo_split")
print("wrote demo_split/{train,valid,test,items}.csv")

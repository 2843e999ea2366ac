"""
Building a ranking prompt and reading the answer
================================================

For one weak user: the history is listed newest first, the candidate set is
the held-out item plus the recommender's top 19, shown in shuffled order.
The parser maps a free-text answer back onto the candidates, dropping titles
that were never offered.
"""

from weakrec import corpus, fixture, promptgen, recsys
from weakrec.metrics import profile_users
from weakrec.pipeline import unseen_pool

split = corpus.loo_split(corpus.build_dataset(corpus.kcore_filter(fixture.load_ratings(), 5)))
ext = fixture.load_titles()
titles = {i: ext[it] for i, it in enumerate(split.item_ids)}
rec = recsys.fit_itemknn(split, k=100, shrink=0.5)
u = min(profile_users(rec, split), key=lambda p: p.auc).user

history = [ev.item for ev in split.train[u]]
rs = recsys.rank(rec, u, unseen_pool(split, u))
inst = promptgen.make_prompt(u, history, rs, split.test[u].item, titles, split.item_ids,
                             split.user_ids[u], j=20, history_cap=10)
print(inst.text)

# a messy answer: extra prose, one invented title, only three candidates named
named = [titles[it] for it in inst.candidates[:3]]
answer = f"Sure! Here is my ranking:\n1. {named[2]}\n2. The Matrix\n3. {named[0].upper()}\n4) {named[1]}"
res = promptgen.parse_response(answer, inst.candidates, inst.titles, inst.rs_order)
print(f"dropped {res.dropped_hallucinations} hallucinated line(s), appended {res.appended_missing} missing")
print("final order:", [titles[it] for it in res.ranking[:5]], "...")

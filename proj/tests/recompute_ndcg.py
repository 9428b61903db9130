"""Recomputes the pipeline's NDCG report from the raw corpus files.

usage: recompute_ndcg.py <serprank binary> <scratch dir>
"""
import csv
import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

CONFIG = {
    "seed": 23,
    "generator": {"n_sessions": 300, "n_users": 120, "n_anonymous": 120,
                  "n_products": 250, "n_categories": 8},
    "features": {"category_width": 4096, "cross_width": 4096},
    "models": {"gbdt": {"n_trees": 10}, "meta": {"n_trees": 10, "min_leaf": 5}},
    "ensemble": {"min_queries_per_category": 5},
    "baseline_shuffles": 10,
}


def ints(cell):
    return [int(t) for t in cell.split()] if cell else []


def ndcg(grades, k):
    def dcg(gs):
        return sum((2 ** g - 1) / math.log2(i + 2) for i, g in enumerate(gs[:k]))
    ideal = dcg(sorted(grades, reverse=True))
    return 1.0 if ideal == 0 else dcg(grades) / ideal


def main():
    binary, work = sys.argv[1], Path(sys.argv[2])
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    (work / "c.json").write_text(json.dumps(CONFIG))
    subprocess.run([binary, "pipeline", "--config", "c.json"], cwd=work, check=True,
                   stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    data, out = work / "data", work / "out"

    queries = {}
    with open(data / "queries.csv", newline="") as f:
        for r in csv.DictReader(f):
            queries[int(r["query_id"])] = {
                "session": int(r["session_id"]), "ts": int(r["event_ts"]),
                "scenario": r["scenario"], "items": ints(r["items"])}
    clicked = set()
    with open(data / "clicks.csv", newline="") as f:
        for r in csv.DictReader(f):
            clicked.add((int(r["query_id"]), int(r["item_id"])))
    purchases = {}
    with open(data / "purchases.csv", newline="") as f:
        for r in csv.DictReader(f):
            purchases.setdefault(int(r["session_id"]), []).append(
                (int(r["item_id"]), int(r["event_ts"])))

    stamps = sorted(q["ts"] for q in queries.values())
    pos = min(max(int(math.floor(0.8 * len(stamps))), 1), len(stamps) - 1)
    cutoff = stamps[pos]
    validation = sorted(qid for qid, q in queries.items() if q["ts"] >= cutoff)

    def grade(qid, item):
        q = queries[qid]
        if any(i == item and ts >= q["ts"] for i, ts in purchases.get(q["session"], [])):
            return 2
        return 1 if (qid, item) in clicked else 0

    run = {}
    for line in (out / "run.txt").read_text().splitlines():
        qid, items = line.split("\t")
        run[int(qid)] = ints(items)
    if sorted(run) != validation:
        sys.exit("run.txt does not cover exactly the validation queries")

    scores = {"full": [], "less": []}
    for qid in validation:
        ranked = run[qid]
        if sorted(ranked) != sorted(queries[qid]["items"]):
            sys.exit(f"query {qid}: ranking is not a permutation of the SERP")
        scores[queries[qid]["scenario"]].append(ndcg([grade(qid, i) for i in ranked], 10))
    full = sum(scores["full"]) / len(scores["full"]) if scores["full"] else 0.0
    less = sum(scores["less"]) / len(scores["less"]) if scores["less"] else 0.0
    combined = 0.8 * less + 0.2 * full

    report = json.loads((out / "report.json").read_text())["ensemble"]
    ok = True
    for name, mine, theirs in [("ndcg_full", full, report["ndcg_full"]),
                               ("ndcg_less", less, report["ndcg_less"]),
                               ("ndcg_combined", combined, report["ndcg_combined"])]:
        good = abs(mine - theirs) <= 1e-9
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {name}: recomputed {mine:.12f} reported {theirs:.12f}")
    per_query = {p["query_id"]: p["ndcg"] for p in report["per_query"]}
    mismatched = 0
    for qid in validation:
        ranked = run[qid]
        mine = ndcg([grade(qid, i) for i in ranked], 10)
        mismatched += abs(mine - per_query[qid]) > 1e-12
    print(f"{'PASS' if mismatched == 0 else 'FAIL'} per-query ndcg: {mismatched} mismatches "
          f"over {len(validation)} queries")
    sys.exit(0 if ok and mismatched == 0 else 1)


if __name__ == "__main__":
    main()

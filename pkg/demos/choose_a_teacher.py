"""Rank candidate teachers by how reproducible their subgroups are.

Each teacher is refit on pairs of bootstrap resamples and the two distilled
trees are compared with a Jaccard-type agreement score. A permutation
"noise" teacher sets the floor: a useful teacher should beat it clearly.

    python demos/choose_a_teacher.py
"""
from cdtree import ForestParams, GbtParams, TeacherSpec, feature_stability, select_teacher
from cdtree.simulation import DgpConfig, gen_dataset

data, _, _ = gen_dataset(DgpConfig("and", n=600, pve=0.8, seed=4))
teachers = [
    TeacherSpec(forest=ForestParams(n_trees=200)),
    TeacherSpec(kind="s-gbt", gbt=GbtParams(n_rounds=100), crossfit_repeats=4),
    TeacherSpec(kind="noise", forest=ForestParams(n_trees=200)),
]
result = select_teacher(data, teachers, depths=(1, 2, 3), B=20, seed=0)

print("mean agreement by teacher and depth")
for t in result.teachers:
    cells = "  ".join(f"d{d}: {result.mean_ssi(t, d):.3f}" for d in result.depths)
    print(f"  {t:<10} {cells}")
print(f"recommended teacher: {result.recommended}\n")

freq = feature_stability(result)[result.recommended]["2"]
top = sorted(freq.items(), key=lambda kv: -kv[1])[:4]
print("features split on at depth 2:", ", ".join(f"{k} {v:.2f}" for k, v in top))

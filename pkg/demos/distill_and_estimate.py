"""Find effect subgroups in a simulated trial and estimate them honestly.

The true effect is 2 when X1 > 0, minus 1 when X2 < -0.5, so there are four
cells with effects -1, 0, 1 and 2. A forest T-learner supplies per-unit
effect predictions on 70% of the data; a pruned tree fit to those
predictions defines the subgroups; the held-out 30% estimates each
subgroup's effect by difference in means.

    python demos/distill_and_estimate.py
"""
from cdtree import CdtConfig, ForestParams, TeacherSpec, TreeParams, heterogeneity_test, run_cdt
from cdtree.cli import tree_text
from cdtree.simulation import DgpConfig, gen_dataset

data, truth, _ = gen_dataset(DgpConfig("additive", n=2000, pve=0.8, seed=1))
config = CdtConfig(teacher=TeacherSpec(forest=ForestParams(n_trees=300)),
                   student=TreeParams(complexity=0.01), seed=1)
report = run_cdt(data, config)

print(f"{report.n_subgroups} subgroups from {len(report.train_index)} training units\n")
print(tree_text(report, data.feature_names))
for est in report.estimates:
    print(f"{est.subgroup.describe(data.feature_names):<30} tau={est.tau_hat:6.3f} "
          f"se={est.se:.3f} n={est.n_g}")

test = heterogeneity_test(report.estimates)
print(f"\nequal-effects test: Q={test.statistic:.1f} on {test.df} df, p={test.p_value:.2g}")

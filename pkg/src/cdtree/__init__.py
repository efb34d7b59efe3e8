"""Interpretable treatment-effect subgroups by distilling a flexible effect model into a tree."""

from .core import Dataset, Direction, Partition, Rule, Subgroup, assign, partition_from_tree
from .errors import CdtError, DataError, EstimationError, PartitionError
from .inference import heterogeneity_test, subgroup_dim, subgroup_variance
from .pipeline import CdtConfig, CdtReport, SubgroupEstimate, run_cdt
from .stability import feature_stability, jaccard_ssi, select_teacher
from .teachers import ForestParams, GbtParams, TeacherKind, TeacherSpec, fit_teacher
from .tree import RegressionTree, TreeParams, cv_prune, fit_tree

__all__ = [
    "CdtConfig", "CdtError", "CdtReport", "DataError", "Dataset", "Direction", "EstimationError",
    "ForestParams", "GbtParams", "Partition", "PartitionError", "RegressionTree", "Rule",
    "Subgroup", "SubgroupEstimate", "TeacherKind", "TeacherSpec", "TreeParams", "assign",
    "cv_prune", "feature_stability", "fit_teacher", "fit_tree", "heterogeneity_test",
    "jaccard_ssi", "partition_from_tree", "run_cdt", "select_teacher", "subgroup_dim",
    "subgroup_variance",
]

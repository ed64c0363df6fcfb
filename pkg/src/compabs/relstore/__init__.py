"""Relation storage and composition of abstractions."""
from .bdd import BDD, FALSE, TRUE
from .compose import (
    ComposedAbstraction,
    ExplicitComposed,
    FactoredComposed,
    GridMismatchError,
    RelationComposed,
    TabulatedInterconnection,
    check_composition_soundness,
    compose_network,
    prefix_sum,
)
from .relation import (
    LayoutError,
    SymbolicRelation,
    Variable,
    VariableLayout,
    conjoin,
    conjoin_all,
    difference,
    exists,
    union,
)

__all__ = [
    "BDD",
    "FALSE",
    "TRUE",
    "ComposedAbstraction",
    "ExplicitComposed",
    "FactoredComposed",
    "GridMismatchError",
    "LayoutError",
    "RelationComposed",
    "SymbolicRelation",
    "TabulatedInterconnection",
    "Variable",
    "VariableLayout",
    "check_composition_soundness",
    "compose_network",
    "conjoin",
    "conjoin_all",
    "difference",
    "exists",
    "prefix_sum",
    "union",
]

"""Improvement metaheuristics and initial-network procedures."""
from .ea import EaConfig, EaHistory, make_mutators, run_ea, selection_stage
from .hh import DelugeConfig, HhState, deluge_accept, hh_run
from .init import JohnConfig, init_ahmed, init_john, init_nikolic, yen_k_shortest
from .mutators import NeuralMutator, Type1Mutator, Type2Mutator, neural_mutate, type1_mutate, type2_mutate

__all__ = [
    "EaConfig", "EaHistory", "make_mutators", "run_ea", "selection_stage",
    "DelugeConfig", "HhState", "deluge_accept", "hh_run",
    "JohnConfig", "init_ahmed", "init_john", "init_nikolic", "yen_k_shortest",
    "NeuralMutator", "Type1Mutator", "Type2Mutator", "neural_mutate", "type1_mutate", "type2_mutate",
]

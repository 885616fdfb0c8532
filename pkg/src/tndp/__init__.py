"""Transit network design: construction MDP, neural policy, metaheuristics and benchmarks."""

"""Service layer: fitting, tail probabilities, r-values, rankers, simulation and I/O."""

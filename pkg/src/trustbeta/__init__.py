"""Fine-grained beta-reputation trust estimation driven by a learned reward."""

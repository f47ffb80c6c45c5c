# Model, solvers, optimization and experiments

# Optimization Solvers Package

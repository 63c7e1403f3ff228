# Grid Model Package

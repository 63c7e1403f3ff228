# Dispatch Package

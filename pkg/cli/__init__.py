# Command Line Package

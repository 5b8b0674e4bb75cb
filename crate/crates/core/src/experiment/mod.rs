//! Reproducible experiment runners behind the command-line interface.

// Implemented in a later commit.

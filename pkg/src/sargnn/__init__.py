"""Grid-graph GNN classifier."""

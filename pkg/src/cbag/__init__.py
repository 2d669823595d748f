"""Clean-graph backdoor attack on two-layer GCN node classification."""

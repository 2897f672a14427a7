"""Monte-Carlo experiments, configuration and result files for the receiver."""

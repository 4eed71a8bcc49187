"""Bayesian active learning of continuous-time Bayesian networks under interventions."""

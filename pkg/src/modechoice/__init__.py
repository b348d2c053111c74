"""Mode-choice modelling: logit models, tree ensembles, neural nets and a
shared evaluation and interpretation toolbox."""

__version__ = "0.1.0"

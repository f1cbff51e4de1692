"""Shared numeric conventions and default hyperparameters.

Both the main implementations and the brute-force oracles import from here,
so tie rules and degenerate-case conventions cannot drift apart.
"""

# Cosine-similarity conventions for degenerate rows. A zero-norm candidate
# must never win an argmax; a zero-norm patch scores every candidate equally
# and therefore resolves to the lowest index.
ZERO_NORM_CANDIDATE_SIM = float("-inf")
ZERO_NORM_PATCH_SIM = 0.0

# Floor added to the softplus of the sigma head so the Gaussian stays valid.
SIGMA_FLOOR = 1e-6

# Default scale on the learnable additive vector.
DEFAULT_ALPHA = 5.0

# Default number of semantic samples drawn per example.
DEFAULT_M = 200

# Default number of retrieved captions per image.
DEFAULT_TOPK = 3

# Context limit of the prompt encoder; prompts are budgeted to fit.
MAX_TEXT_TOKENS = 77

# Gaussian length-penalty width used by the consensus metric.
CIDER_SIGMA = 6.0

"""theftguard: black-box model-theft simulation and a label-poisoning defense.

Subpackages and modules:
  ndnet     - dense/conv networks with hand-rolled reverse- and forward-mode gradients
  zoo       - the architecture catalog (attacker table + defender CNN) and checkpoints
  advcraft  - fast gradient sign method and transfer-attack evaluation
  counterdef- the output-distribution counter-attack and its renormalizations
  theftsim  - oracle wrapper, jacobian dataset augmentation, substitute training
  dataio    - IDX/MNIST ingestion, deterministic splits, synthetic blobs
  harness   - scenario orchestration, metrics, CSV reports, CLI
"""

__version__ = "0.1.0"

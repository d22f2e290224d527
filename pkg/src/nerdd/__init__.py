"""nerdd: an event/RGB drone-detection toolkit.

Subpackages cover the full desk-scale pipeline: event decoding and
pseudo-frame accumulation (events), event/RGB registration (registration),
semi-automatic annotation (annotate), the fusion detection network
(fusion), bipartite matching and the set loss (matching), COCO-style
evaluation (evaluation), dataset manifests and stats (dataset), and the
annotation review HTTP service (service).
"""

__version__ = "0.1.0"

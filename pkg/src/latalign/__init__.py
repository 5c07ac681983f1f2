"""latalign: residual-mapper alignment of a vision-language embedding space
to a style-based generator's w and s latent spaces.

Train with :func:`latalign.trainer.run`, then use
:class:`latalign.inference.AlignedModel` for inversion, text-to-image
generation and text-driven manipulation. A frozen seeded toy generator/encoder
pair makes everything runnable without pretrained weights.
"""

from .spaces import Direction, Embedding, Image, SBundle, WLatent

__all__ = ["Embedding", "WLatent", "SBundle", "Image", "Direction"]

__version__ = "0.1.0"

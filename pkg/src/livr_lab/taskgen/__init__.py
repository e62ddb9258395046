from .generators import (KINDS, PROMPTS, GenerationError, TaskExample, gen_correspondence,
                         gen_counting, gen_jigsaw, gen_localization, gen_reflectance, generate)
from .geometry import Box, iou

__all__ = [
    "KINDS", "PROMPTS", "GenerationError", "TaskExample", "Box", "iou", "generate",
    "gen_correspondence", "gen_counting", "gen_jigsaw", "gen_localization", "gen_reflectance",
]

from .presetprimitives import PresetPrimitives
from .lossprimitives import LossPrimitives
from .enums import Scorer, ScorerKey

# PresetScorers (in .presetscorers) depends on the training stack, which itself depends on the primitives above,
# so it is imported from its own module where needed

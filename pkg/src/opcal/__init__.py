"""opcal: exact operadic calculus at desk scale.

Chain complexes over the rationals, weight-graded operads and their dual
cooperads from quadratic-linear presentations, homotopy algebras with
infinity-morphisms, homotopy transfer, cylinders and obstruction theory.
All arithmetic is exact and every verdict is windowed by explicit weight,
arity and degree bounds. Values are immutable after validated
construction and all operations are pure, so concurrent use is safe.
"""

__version__ = "0.1.0"

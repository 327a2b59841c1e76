"""Teacher-student feature distillation with channel matching.

Matches teacher feature channels to student channels by solving a balanced
min-cost assignment, collapses the matched teacher channels with
parameter-free reduction operators, and trains the student by alternating
matching updates with SGD (coordinate descent).
"""

__version__ = "0.1.0"

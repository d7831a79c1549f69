"""Code generation: instruction templates and the candidate emitter."""
from .emit import (DEFAULT_REGISTERS, PEDAGOGICAL_REGISTERS, AllocState, Candidate, FoldPlan,
                   InvalidCandidate, OutOfRegistersUnrecoverable, choice_points, emit,
                   memory_operand_fold, random_candidate, spill_choice, validate_candidate)
from .templates import (BY_ID, TEMPLATES, Template, UnsupportedKind, node_templates,
                        shift_add_plan, templates_for)

__all__ = [
    "DEFAULT_REGISTERS", "PEDAGOGICAL_REGISTERS", "AllocState", "Candidate", "FoldPlan",
    "InvalidCandidate", "OutOfRegistersUnrecoverable", "choice_points", "emit",
    "memory_operand_fold", "random_candidate", "spill_choice", "validate_candidate",
    "BY_ID", "TEMPLATES", "Template", "UnsupportedKind", "node_templates", "shift_add_plan", "templates_for",
]

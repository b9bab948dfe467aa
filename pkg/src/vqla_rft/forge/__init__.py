"""Chain-of-thought forging: prompt packs, sub-answer generation, assembly."""

from .assemble import CONNECTIVES, IdAllocator, assemble_cot, compile_qa_pairs, compile_records
from .client import (
    AuditLog,
    GenerationEndpointConfig,
    Provenance,
    SubAnswerSet,
    complete,
    fetch_sub_answers,
    request_body,
)
from .pipeline import forge_records
from .prompts import (
    SUPPORTED_TYPES,
    TEMPLATE_VERSION,
    FrameAnnotation,
    LabelledBox,
    PromptPack,
    SubQuestion,
    build_prompt_pack,
    load_template,
    parse_template,
    required_stages,
)

__all__ = [
    "AuditLog", "CONNECTIVES", "FrameAnnotation", "GenerationEndpointConfig", "IdAllocator",
    "LabelledBox", "PromptPack", "Provenance", "SUPPORTED_TYPES", "SubAnswerSet", "SubQuestion",
    "TEMPLATE_VERSION", "assemble_cot", "build_prompt_pack", "compile_qa_pairs", "compile_records",
    "complete", "fetch_sub_answers", "forge_records", "load_template", "parse_template",
    "request_body", "required_stages",
]
